"""Shi-Tomasi corner response, non-maximum suppression, subpixel refinement,
and the complete single-patch measurement procedure.

The response is the minimum eigenvalue of the Gaussian-windowed structure
tensor of central-difference gradients.  Refinement takes one Newton step
on a second-order expansion of the response surface and rejects steps that
are numerically meaningless or larger than half a pixel; measurement
composes response, suppression, candidate selection and refinement, and
reports failure for structures that cannot be measured reliably.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .errors import RangeError
from .image import ImageGray

DEFAULT_SIGMA = 1.0
PATCH_NMS_RADIUS = 1
FULL_NMS_RADIUS = 2
PATCH_THRESHOLD = 1e-6
DET_GUARD = 1e-12


@dataclass(frozen=True)
class ScoreMap:
    """Per-pixel corner response over an image.

    Maps produced by :func:`response` are non-negative everywhere; the
    container itself only requires finite values so that refinement can be
    exercised on arbitrary smooth surfaces.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("score map contains non-finite values")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class MeasurementOutcome:
    """Result of measuring a patch: a refined subpixel point, or failure."""

    point: tuple[float, float] | None

    @classmethod
    def refined(cls, x: float, y: float) -> "MeasurementOutcome":
        return cls(point=(float(x), float(y)))

    @classmethod
    def failed(cls) -> "MeasurementOutcome":
        return cls(point=None)

    @property
    def ok(self) -> bool:
        return self.point is not None


@lru_cache(maxsize=8)
def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized Gaussian taps truncated at 3 sigma."""
    radius = max(int(np.ceil(3.0 * sigma)), 1)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()
    k.flags.writeable = False
    return k


@lru_cache(maxsize=32)
def smoothing_matrix(n: int, sigma: float) -> np.ndarray:
    """Dense matrix applying the truncated Gaussian with replicated borders.

    Row i holds the effective weights of the 1-D smoothing at position i,
    identical to ``ndimage.convolve1d(..., mode="nearest")``.
    """
    k = gaussian_kernel(sigma)
    r = k.size // 2
    m = np.zeros((n, n))
    for i in range(n):
        for o in range(-r, r + 1):
            j = min(max(i + o, 0), n - 1)
            m[i, j] += k[o + r]
    m.flags.writeable = False
    return m


def gradient_products(data: np.ndarray):
    """Central-difference gradient products gx*gx, gx*gy, gy*gy.

    Works on a single image (H, W) or a stack (B, H, W); borders replicate.
    """
    pad = [(1, 1), (1, 1)] if data.ndim == 2 else [(0, 0), (1, 1), (1, 1)]
    p = np.pad(data, pad, mode="edge")
    gx = 0.5 * (p[..., 1:-1, 2:] - p[..., 1:-1, :-2])
    gy = 0.5 * (p[..., 2:, 1:-1] - p[..., :-2, 1:-1])
    return gx * gx, gx * gy, gy * gy


def _min_eigenvalue(sxx: np.ndarray, sxy: np.ndarray, syy: np.ndarray) -> np.ndarray:
    half_tr = 0.5 * (sxx + syy)
    half_df = 0.5 * (sxx - syy)
    lam = half_tr - np.sqrt(half_df * half_df + sxy * sxy)
    return np.maximum(lam, 0.0)


def response(img: ImageGray, sigma_window: float = DEFAULT_SIGMA) -> ScoreMap:
    """Per-pixel minimum eigenvalue of the windowed structure tensor.

    Flat regions yield exactly zero; the image must be at least 7x7.
    """
    if img.width < 7 or img.height < 7:
        raise ValueError("image must be at least 7x7 for the corner response")
    gxx, gxy, gyy = gradient_products(img.data)
    k = gaussian_kernel(sigma_window)
    smoothed = []
    for a in (gxx, gxy, gyy):
        s = ndimage.convolve1d(a, k, axis=1, mode="nearest")
        s = ndimage.convolve1d(s, k, axis=0, mode="nearest")
        smoothed.append(s)
    return ScoreMap(_min_eigenvalue(smoothed[0], smoothed[1], smoothed[2]))


def response_stack(data: np.ndarray, sigma_window: float = DEFAULT_SIGMA) -> np.ndarray:
    """Corner response over a stack of patches (B, S, S), vectorized.

    Same formula as :func:`response`; the Gaussian window is applied as a
    dense matrix product, which is faster for many small patches.
    """
    b, h, w = data.shape
    gxx, gxy, gyy = gradient_products(data)
    mh = smoothing_matrix(h, sigma_window)
    mwt = smoothing_matrix(w, sigma_window).T
    out = []
    for a in (gxx, gxy, gyy):
        out.append(mh @ (a @ mwt))
    return _min_eigenvalue(out[0], out[1], out[2])


def nms_candidates(score: ScoreMap, radius: int = FULL_NMS_RADIUS,
                   threshold: float = 0.0):
    """Strict local maxima of the score map, at or above a threshold.

    Returns ``(xy, values)`` where ``xy`` is an (N, 2) int64 array of
    (x, y) pixel positions sorted by descending score, ties broken by
    (row, col) order.  A pixel qualifies when it strictly exceeds every
    other pixel of its (2*radius+1)^2 neighborhood.
    """
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    vals = score.values
    size = 2 * radius + 1
    footprint = np.ones((size, size), dtype=bool)
    footprint[radius, radius] = False
    neighbor_max = ndimage.maximum_filter(
        vals, footprint=footprint, mode="constant", cval=-np.inf)
    mask = (vals > neighbor_max) & (vals >= threshold)
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    scores = vals[ys, xs]
    order = np.lexsort((xs, ys, -scores))
    xy = np.stack([xs[order], ys[order]], axis=1).astype(np.int64)
    return xy, scores[order]


def refine_offsets(neigh: np.ndarray):
    """Newton steps from 3x3 score neighborhoods, vectorized over (B, 3, 3).

    Returns ``(delta, ok)``: the subpixel offset (dx, dy) of each center and
    whether the step is trustworthy (well-conditioned curvature and an
    infinity-norm below half a pixel).
    """
    neigh = np.asarray(neigh, dtype=np.float64).reshape(-1, 3, 3)
    gx = 0.5 * (neigh[:, 1, 2] - neigh[:, 1, 0])
    gy = 0.5 * (neigh[:, 2, 1] - neigh[:, 0, 1])
    hxx = neigh[:, 1, 2] - 2.0 * neigh[:, 1, 1] + neigh[:, 1, 0]
    hyy = neigh[:, 2, 1] - 2.0 * neigh[:, 1, 1] + neigh[:, 0, 1]
    hxy = 0.25 * (neigh[:, 2, 2] - neigh[:, 2, 0] - neigh[:, 0, 2] + neigh[:, 0, 0])
    scale = np.maximum(np.abs(hxx), np.maximum(np.abs(hyy), np.abs(hxy)))
    det = hxx * hyy - hxy * hxy
    solvable = (scale > 0.0) & (np.abs(det) > DET_GUARD * scale * scale)
    safe_det = np.where(solvable, det, 1.0)
    dx = -(hyy * gx - hxy * gy) / safe_det
    dy = -(-hxy * gx + hxx * gy) / safe_det
    delta = np.stack([dx, dy], axis=1)
    ok = solvable & (np.max(np.abs(delta), axis=1) < 0.5)
    delta[~ok] = 0.0
    return delta, ok


def refine(score: ScoreMap, cand) -> MeasurementOutcome:
    """Subpixel refinement of an integer candidate on the score surface.

    The candidate must be at least one pixel from the map border.
    """
    x, y = int(cand[0]), int(cand[1])
    if not (1 <= x <= score.width - 2 and 1 <= y <= score.height - 2):
        raise RangeError(f"candidate ({x}, {y}) too close to the score map border")
    neigh = score.values[y - 1:y + 2, x - 1:x + 2]
    delta, ok = refine_offsets(neigh[None])
    if not ok[0]:
        return MeasurementOutcome.failed()
    return MeasurementOutcome.refined(x + delta[0, 0], y + delta[0, 1])


def measure(patch: ImageGray, sigma_window: float = DEFAULT_SIGMA,
            nms_radius: int = PATCH_NMS_RADIUS,
            threshold: float = PATCH_THRESHOLD) -> MeasurementOutcome:
    """Measure the dominant corner of a small patch.

    Response, suppression, selection of the strongest interior candidate,
    then subpixel refinement; any stage without a reliable result yields
    failure.  The patch must be odd-sized and at least 7x7.
    """
    if patch.width != patch.height or patch.width < 7 or patch.width % 2 != 1:
        raise ValueError("measurement patch must be square, odd-sized and >= 7x7")
    score = response(patch, sigma_window)
    xy, _ = nms_candidates(score, radius=nms_radius, threshold=threshold)
    if xy.shape[0] == 0:
        return MeasurementOutcome.failed()
    interior = (
        (xy[:, 0] >= 1) & (xy[:, 0] <= score.width - 2)
        & (xy[:, 1] >= 1) & (xy[:, 1] <= score.height - 2)
    )
    xy = xy[interior]
    if xy.shape[0] == 0:
        return MeasurementOutcome.failed()
    return refine(score, xy[0])


def measure_stack(patches: np.ndarray, sigma_window: float = DEFAULT_SIGMA,
                  threshold: float = PATCH_THRESHOLD):
    """Vectorized :func:`measure` over a stack of patches (B, S, S).

    Returns ``(points, ok)`` with points in patch pixel coordinates.
    Agrees with the scalar composition up to floating-point rounding.
    """
    b, s, _ = patches.shape
    lam = response_stack(patches, sigma_window)
    interior = lam[:, 1:-1, 1:-1]
    strict = np.ones_like(interior, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            strict &= interior > lam[:, 1 + di:s - 1 + di, 1 + dj:s - 1 + dj]
    strict &= interior >= threshold
    masked = np.where(strict, interior, -np.inf)
    flat = masked.reshape(b, -1)
    best = flat.argmax(axis=1)
    has_cand = np.take_along_axis(flat, best[:, None], axis=1)[:, 0] > -np.inf
    bi = best // (s - 2) + 1
    bj = best % (s - 2) + 1
    rows = bi[:, None, None] + np.arange(-1, 2)[None, :, None]
    cols = bj[:, None, None] + np.arange(-1, 2)[None, None, :]
    neigh = lam[np.arange(b)[:, None, None], rows, cols]
    delta, ok = refine_offsets(neigh)
    points = np.stack([bj + delta[:, 0], bi + delta[:, 1]], axis=1)
    ok &= has_cand
    points[~ok] = 0.0
    return points, ok


def write_score_map(score: ScoreMap, path) -> None:
    """Binary export: little-endian u32 width and height, then float32 values."""
    with open(path, "wb") as f:
        f.write(struct.pack("<II", score.width, score.height))
        f.write(score.values.astype("<f4").tobytes())


def read_score_map(path) -> ScoreMap:
    with open(path, "rb") as f:
        header = f.read(8)
        if len(header) != 8:
            raise ValueError(f"{path}: truncated score map header")
        width, height = struct.unpack("<II", header)
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != width * height:
        raise ValueError(f"{path}: raster size does not match header")
    return ScoreMap(data.reshape(height, width).astype(np.float64))
