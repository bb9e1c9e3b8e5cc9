"""Fused warp + measurement kernels for Monte-Carlo scoring.

The hot loop of stability estimation resamples a small patch through a
random homography and measures its dominant corner; this runs hundreds of
thousands of times per image.  A numba kernel fuses both stages; a pure
numpy fallback implements the identical arithmetic and is kept both for
environments without numba and as a cross-check in the test suite.

Every patch is processed independently, so results never depend on thread
count or batch partitioning.
"""

from __future__ import annotations

import os

import numpy as np

from .image import bilinear_at, patch_grid
from .shitomasi import measure_stack


def warp_measure_numpy(img_data: np.ndarray, mats: np.ndarray, centers: np.ndarray,
                       size: int, kern: np.ndarray, threshold: float):
    """Reference implementation: warp patches, then measure their corners.

    ``mats`` are (B, 3, 3) patch-frame homographies; ``centers`` the (B, 2)
    image positions of the patch centers.  Returns patch-frame measurement
    points (B, 2), success flags (B,), and per-patch out-of-support counts.
    """
    b = mats.shape[0]
    offs = patch_grid(size)
    q = np.einsum("bij,pj->bip", mats, offs)
    xy = q[:, :2, :] / q[:, 2:3, :]
    xs = xy[:, 0, :] + centers[:, 0:1]
    ys = xy[:, 1, :] + centers[:, 1:2]
    values, inside = bilinear_at(img_data, xs, ys)
    patches = values.reshape(b, size, size)
    oos = (~inside).sum(axis=1).astype(np.int64)
    points, ok = measure_stack(patches, threshold=threshold)
    return points, ok, oos


_SIGMA_KERNEL_CACHE: dict = {}

try:  # pragma: no cover - exercised implicitly by the dispatch tests
    import warnings

    # stale-TBB advisory from numba's threading-layer probe; the fallback
    # layer it picks is fine for these kernels
    warnings.filterwarnings("ignore", message=r".*TBB threading layer.*")

    from numba import njit, prange
    import numba as _numba

    @njit(cache=True, parallel=True, fastmath=False)
    def _warp_measure_jit(img, mats, centers, size, kern, threshold, out_pt, out_ok, out_oos):
        height, width = img.shape
        b = mats.shape[0]
        r = kern.size // 2
        half = (size - 1) * 0.5
        for t in prange(b):
            patch = np.empty((size, size))
            kx = centers[t, 0]
            ky = centers[t, 1]
            oos = 0
            for i in range(size):
                dy = i - half
                for j in range(size):
                    dx = j - half
                    u = mats[t, 0, 0] * dx + mats[t, 0, 1] * dy + mats[t, 0, 2]
                    v = mats[t, 1, 0] * dx + mats[t, 1, 1] * dy + mats[t, 1, 2]
                    w = mats[t, 2, 0] * dx + mats[t, 2, 1] * dy + mats[t, 2, 2]
                    x = u / w + kx
                    y = v / w + ky
                    inside = (x >= 0.0) and (x <= width - 1.0) and (y >= 0.0) and (y <= height - 1.0)
                    if not inside:
                        oos += 1
                        if x != x:  # NaN from a degenerate mapping
                            x = 0.0
                        if y != y:
                            y = 0.0
                        if x < 0.0:
                            x = 0.0
                        elif x > width - 1.0:
                            x = width - 1.0
                        if y < 0.0:
                            y = 0.0
                        elif y > height - 1.0:
                            y = height - 1.0
                    x0 = int(np.floor(x))
                    y0 = int(np.floor(y))
                    if x0 > width - 2:
                        x0 = width - 2
                    if y0 > height - 2:
                        y0 = height - 2
                    fx = x - x0
                    fy = y - y0
                    patch[i, j] = (
                        img[y0, x0] * (1.0 - fx) * (1.0 - fy)
                        + img[y0, x0 + 1] * fx * (1.0 - fy)
                        + img[y0 + 1, x0] * (1.0 - fx) * fy
                        + img[y0 + 1, x0 + 1] * fx * fy
                    )
            out_oos[t] = oos

            # structure tensor products with replicated borders
            gxx = np.empty((size, size))
            gxy = np.empty((size, size))
            gyy = np.empty((size, size))
            for i in range(size):
                ip = i + 1 if i + 1 < size else size - 1
                im = i - 1 if i - 1 >= 0 else 0
                for j in range(size):
                    jp = j + 1 if j + 1 < size else size - 1
                    jm = j - 1 if j - 1 >= 0 else 0
                    gx = 0.5 * (patch[i, jp] - patch[i, jm])
                    gy = 0.5 * (patch[ip, j] - patch[im, j])
                    gxx[i, j] = gx * gx
                    gxy[i, j] = gx * gy
                    gyy[i, j] = gy * gy

            # separable Gaussian window, replicated borders
            ta = np.empty((size, size))
            tb = np.empty((size, size))
            tc = np.empty((size, size))
            for i in range(size):
                for j in range(size):
                    sa = 0.0
                    sb = 0.0
                    sc = 0.0
                    for o in range(-r, r + 1):
                        jj = j + o
                        if jj < 0:
                            jj = 0
                        elif jj > size - 1:
                            jj = size - 1
                        wgt = kern[o + r]
                        sa += wgt * gxx[i, jj]
                        sb += wgt * gxy[i, jj]
                        sc += wgt * gyy[i, jj]
                    ta[i, j] = sa
                    tb[i, j] = sb
                    tc[i, j] = sc
            lam = np.empty((size, size))
            for j in range(size):
                for i in range(size):
                    sa = 0.0
                    sb = 0.0
                    sc = 0.0
                    for o in range(-r, r + 1):
                        ii = i + o
                        if ii < 0:
                            ii = 0
                        elif ii > size - 1:
                            ii = size - 1
                        wgt = kern[o + r]
                        sa += wgt * ta[ii, j]
                        sb += wgt * tb[ii, j]
                        sc += wgt * tc[ii, j]
                    half_tr = 0.5 * (sa + sc)
                    half_df = 0.5 * (sa - sc)
                    lm = half_tr - np.sqrt(half_df * half_df + sb * sb)
                    lam[i, j] = lm if lm > 0.0 else 0.0

            # strongest strict interior maximum, row-major tie-break
            bi = -1
            bj = -1
            bv = -1.0
            for i in range(1, size - 1):
                for j in range(1, size - 1):
                    v = lam[i, j]
                    if v < threshold or v <= bv:
                        continue
                    is_max = True
                    for di in range(-1, 2):
                        for dj in range(-1, 2):
                            if di == 0 and dj == 0:
                                continue
                            if lam[i + di, j + dj] >= v:
                                is_max = False
                                break
                        if not is_max:
                            break
                    if is_max:
                        bv = v
                        bi = i
                        bj = j
            if bi < 0:
                out_ok[t] = False
                out_pt[t, 0] = 0.0
                out_pt[t, 1] = 0.0
                continue

            # one Newton step with curvature and step-size guards
            gxs = 0.5 * (lam[bi, bj + 1] - lam[bi, bj - 1])
            gys = 0.5 * (lam[bi + 1, bj] - lam[bi - 1, bj])
            hxx = lam[bi, bj + 1] - 2.0 * lam[bi, bj] + lam[bi, bj - 1]
            hyy = lam[bi + 1, bj] - 2.0 * lam[bi, bj] + lam[bi - 1, bj]
            hxy = 0.25 * (lam[bi + 1, bj + 1] - lam[bi + 1, bj - 1]
                          - lam[bi - 1, bj + 1] + lam[bi - 1, bj - 1])
            scale = abs(hxx)
            if abs(hyy) > scale:
                scale = abs(hyy)
            if abs(hxy) > scale:
                scale = abs(hxy)
            det = hxx * hyy - hxy * hxy
            if scale <= 0.0 or abs(det) <= 1e-12 * scale * scale:
                out_ok[t] = False
                out_pt[t, 0] = 0.0
                out_pt[t, 1] = 0.0
                continue
            dx = -(hyy * gxs - hxy * gys) / det
            dy = -(-hxy * gxs + hxx * gys) / det
            if abs(dx) >= 0.5 or abs(dy) >= 0.5:
                out_ok[t] = False
                out_pt[t, 0] = 0.0
                out_pt[t, 1] = 0.0
                continue
            out_ok[t] = True
            out_pt[t, 0] = bj + dx
            out_pt[t, 1] = bi + dy

    def warp_measure_numba(img_data, mats, centers, size, kern, threshold):
        b = mats.shape[0]
        out_pt = np.zeros((b, 2))
        out_ok = np.zeros(b, dtype=np.bool_)
        out_oos = np.zeros(b, dtype=np.int64)
        _warp_measure_jit(
            np.ascontiguousarray(img_data), np.ascontiguousarray(mats),
            np.ascontiguousarray(centers), size, np.ascontiguousarray(kern),
            threshold, out_pt, out_ok, out_oos)
        return out_pt, out_ok, out_oos

    HAVE_NUMBA = True

    def set_threads(n: int) -> None:
        _numba.set_num_threads(max(1, min(int(n), _numba.config.NUMBA_NUM_THREADS)))

except ImportError:  # pragma: no cover
    HAVE_NUMBA = False
    warp_measure_numba = None

    def set_threads(n: int) -> None:
        return None


def _env_disables_numba() -> bool:
    return os.environ.get("STABSCORE_NO_NUMBA", "") not in ("", "0")


def warp_measure(img_data, mats, centers, size, kern, threshold):
    """Warp one patch per row of ``mats`` and measure it.

    Dispatches to the numba kernel when available (honoring the
    STABSCORE_NO_NUMBA escape hatch), otherwise to the numpy reference.
    """
    if HAVE_NUMBA and not _env_disables_numba():
        return warp_measure_numba(img_data, mats, centers, size, kern, threshold)
    return warp_measure_numpy(img_data, mats, centers, size, kern, threshold)
