"""Monte-Carlo stability estimation for corner keypoints.

For one keypoint, ``m`` random homographies are drawn from the
beta-difficulty family, the surrounding patch is resampled through each,
and the measurement procedure is run on every synthetic view.  Successful
measurements project back into the image; their distances to the keypoint
summarize how stably the underlying structure can be re-measured under
viewpoint change.  Failed measurements contribute a saturation distance
``d_fail`` (half the patch diagonal) and are excluded from the covariance
statistics, which keeps the second-moment decomposition an exact identity
on the successful subsample.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _kernels
from .errors import DomainError, RangeError
from .homography import BetaConfig, generate_batch
from .image import ImageGray
from .shitomasi import DEFAULT_SIGMA, PATCH_THRESHOLD, gaussian_kernel
from .streams import Stream, child_keys

DEFAULT_SAMPLES = 128
DEFAULT_PATCH_SIZE = 13


def failure_distance(patch_size: int = DEFAULT_PATCH_SIZE) -> float:
    """Saturation distance for failed measurements: half the patch diagonal."""
    return patch_size * math.sqrt(2.0) / 2.0


ETA_MAX = failure_distance()


class EmeVariant(Enum):
    """Which functional of the projection distribution to report."""

    MEAN_DIST = "mean-dist"
    SECOND_MOMENT = "second-moment"
    SQRT_SECOND_MOMENT = "sqrt-second-moment"
    SPECTRAL = "spectral"


@dataclass(frozen=True)
class BetaEmeEstimate:
    """Monte-Carlo summary of keypoint projection error.

    ``mean_dist`` and ``second_moment`` average over all ``m_total``
    samples with failures pinned at the saturation distance;
    ``cov_trace``, ``spectral_2x`` and ``delta_sq`` come from the
    successful projections only (population covariance, squared offset of
    the keypoint from the mean projection).
    """

    mean_dist: float
    second_moment: float
    cov_trace: float
    spectral_2x: float
    delta_sq: float
    m_total: int
    m_failed: int

    def __post_init__(self):
        if self.m_total < 1 or not (0 <= self.m_failed <= self.m_total):
            raise ValueError("inconsistent sample counts")
        for name in ("mean_dist", "second_moment", "cov_trace", "spectral_2x", "delta_sq"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0.0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")

    @property
    def sample_std(self) -> float:
        """Population standard deviation of the per-sample distances."""
        var = self.second_moment - self.mean_dist**2
        return math.sqrt(max(var, 0.0))

    @classmethod
    def from_projections(cls, k, projections, m_failed: int = 0,
                         d_fail: float = ETA_MAX) -> "BetaEmeEstimate":
        """Build an estimate from explicit projections of one keypoint."""
        k = np.asarray(k, dtype=np.float64).reshape(2)
        proj = np.asarray(projections, dtype=np.float64).reshape(-1, 2)
        n_ok = proj.shape[0]
        m_total = n_ok + m_failed
        if m_total < 1:
            raise ValueError("need at least one sample")
        dists = np.hypot(proj[:, 0] - k[0], proj[:, 1] - k[1])
        sum_d = float(dists.sum()) + m_failed * d_fail
        sum_d2 = float((dists**2).sum()) + m_failed * d_fail**2
        if n_ok > 0:
            mu = proj.mean(axis=0)
            diff = proj - mu
            cxx = float((diff[:, 0] ** 2).mean())
            cyy = float((diff[:, 1] ** 2).mean())
            cxy = float((diff[:, 0] * diff[:, 1]).mean())
            lam_max = 0.5 * (cxx + cyy) + math.hypot(0.5 * (cxx - cyy), cxy)
            cov_trace = cxx + cyy
            spectral_2x = 2.0 * lam_max
            delta_sq = float((k[0] - mu[0]) ** 2 + (k[1] - mu[1]) ** 2)
        else:
            cov_trace = spectral_2x = delta_sq = 0.0
        return cls(
            mean_dist=sum_d / m_total,
            second_moment=sum_d2 / m_total,
            cov_trace=max(cov_trace, 0.0),
            spectral_2x=max(spectral_2x, 0.0),
            delta_sq=delta_sq,
            m_total=m_total,
            m_failed=m_failed,
        )


def bound_value(est: BetaEmeEstimate, variant: EmeVariant) -> float:
    """Report the estimate through one member of the bound family."""
    if variant is EmeVariant.MEAN_DIST:
        return est.mean_dist
    if variant is EmeVariant.SECOND_MOMENT:
        return est.second_moment
    if variant is EmeVariant.SQRT_SECOND_MOMENT:
        return math.sqrt(est.second_moment)
    if variant is EmeVariant.SPECTRAL:
        return est.spectral_2x
    raise ValueError(f"unknown variant {variant!r}")


def stability_score(eta: float) -> float:
    """Map an expected-error value to a score in (0, 1]: exp(-eta).

    Strictly decreasing in ``eta``; exactly 1 only at zero error.
    """
    if not np.isfinite(eta) or eta < 0.0:
        raise DomainError(f"eta must be finite and non-negative, got {eta}")
    return math.exp(-eta)


def support_margin(cfg: BetaConfig, patch_size: int = DEFAULT_PATCH_SIZE) -> int:
    """Pixels of image border a keypoint must keep clear for warping.

    The warped patch samples the image no farther than
    ``half_extent + d_max`` from the keypoint (the perturbed square bounds
    the warp), plus one pixel of bilinear support and one of slack for a
    fractional center.
    """
    half = (patch_size - 1) * 0.5
    if half > cfg.half_extent + 1e-9:
        raise ValueError(
            f"patch half-extent {half} exceeds generator square {cfg.half_extent}")
    return int(math.ceil(cfg.half_extent + cfg.d_max)) + 2


def keypoint_in_bounds(shape: tuple[int, int], k, margin: int) -> bool:
    """True if the (x, y) keypoint keeps ``margin`` pixels from every border."""
    h, w = shape
    x, y = float(k[0]), float(k[1])
    return margin <= x <= w - 1 - margin and margin <= y <= h - 1 - margin


def estimate_batch(img: ImageGray, kps: np.ndarray, cfg: BetaConfig,
                   keys: np.ndarray, m: int = DEFAULT_SAMPLES,
                   patch_size: int = DEFAULT_PATCH_SIZE,
                   d_fail: float | None = None,
                   threshold: float = PATCH_THRESHOLD,
                   sigma_window: float = DEFAULT_SIGMA,
                   threads: int | None = None,
                   chunk_samples: int = 65536) -> list[BetaEmeEstimate]:
    """Estimate stability for many keypoints of one image.

    ``keys[i]`` is the stream key for keypoint ``i`` (sample ``j`` uses its
    child key ``j``), so results are independent of chunking, threading and
    evaluation order.  All keypoints must satisfy the support margin.
    """
    if m < 2:
        raise ValueError(f"need at least 2 samples, got {m}")
    kps = np.asarray(kps, dtype=np.float64).reshape(-1, 2)
    keys = np.asarray(keys, dtype=np.uint64).reshape(-1)
    if keys.shape[0] != kps.shape[0]:
        raise ValueError("one stream key per keypoint required")
    if d_fail is None:
        d_fail = failure_distance(patch_size)
    margin = support_margin(cfg, patch_size)
    for i in range(kps.shape[0]):
        if not keypoint_in_bounds(img.data.shape, kps[i], margin):
            raise RangeError(
                f"keypoint {tuple(kps[i])} violates the {margin}px support margin")

    _kernels.set_threads(resolve_threads(threads))
    kern = gaussian_kernel(sigma_window)
    half = (patch_size - 1) * 0.5
    n_kp = kps.shape[0]
    estimates: list[BetaEmeEstimate] = []
    kp_per_chunk = max(1, chunk_samples // m)
    for start in range(0, n_kp, kp_per_chunk):
        stop = min(start + kp_per_chunk, n_kp)
        nc = stop - start
        sample_keys = child_keys(keys[start:stop, None], np.arange(m)[None, :]).reshape(-1)
        mats = generate_batch(sample_keys, cfg)
        centers = np.repeat(kps[start:stop], m, axis=0)
        points, ok, _ = _kernels.warp_measure(
            img.data, mats, centers, patch_size, kern, threshold)

        # project measurements back into the image through their homography
        off = points - half
        w = mats[:, 2, 0] * off[:, 0] + mats[:, 2, 1] * off[:, 1] + mats[:, 2, 2]
        px = (mats[:, 0, 0] * off[:, 0] + mats[:, 0, 1] * off[:, 1] + mats[:, 0, 2]) / w
        py = (mats[:, 1, 0] * off[:, 0] + mats[:, 1, 1] * off[:, 1] + mats[:, 1, 2]) / w
        proj = np.stack([px + centers[:, 0], py + centers[:, 1]], axis=1)

        proj = proj.reshape(nc, m, 2)
        okm = ok.reshape(nc, m)
        dist = np.hypot(proj[:, :, 0] - kps[start:stop, 0:1],
                        proj[:, :, 1] - kps[start:stop, 1:2])
        dist = np.where(okm, dist, d_fail)
        mean_d = dist.mean(axis=1)
        second = (dist * dist).mean(axis=1)

        counts = okm.sum(axis=1)
        safe = np.maximum(counts, 1)
        wmask = okm.astype(np.float64)
        mu = (proj * wmask[:, :, None]).sum(axis=1) / safe[:, None]
        dx = (proj[:, :, 0] - mu[:, 0:1]) * wmask
        dy = (proj[:, :, 1] - mu[:, 1:2]) * wmask
        cxx = (dx * dx).sum(axis=1) / safe
        cyy = (dy * dy).sum(axis=1) / safe
        cxy = (dx * dy).sum(axis=1) / safe
        lam_max = 0.5 * (cxx + cyy) + np.hypot(0.5 * (cxx - cyy), cxy)
        delta_sq = (kps[start:stop, 0] - mu[:, 0]) ** 2 + (kps[start:stop, 1] - mu[:, 1]) ** 2
        none_ok = counts == 0
        for i in range(nc):
            if none_ok[i]:
                tr = s2 = dsq = 0.0
            else:
                tr = max(float(cxx[i] + cyy[i]), 0.0)
                s2 = max(2.0 * float(lam_max[i]), 0.0)
                dsq = float(delta_sq[i])
            estimates.append(BetaEmeEstimate(
                mean_dist=float(mean_d[i]),
                second_moment=float(second[i]),
                cov_trace=tr,
                spectral_2x=s2,
                delta_sq=dsq,
                m_total=m,
                m_failed=int(m - counts[i]),
            ))
    return estimates


def estimate(img: ImageGray, k, cfg: BetaConfig, stream: Stream,
             m: int = DEFAULT_SAMPLES, patch_size: int = DEFAULT_PATCH_SIZE,
             d_fail: float | None = None,
             threshold: float = PATCH_THRESHOLD) -> BetaEmeEstimate:
    """Estimate the stability of a single keypoint.

    Sample ``j`` draws its homography from ``stream.child(j)``; the result
    is bit-reproducible for a fixed stream and sample count.  Raises
    :class:`RangeError` when the warped patch cannot stay inside the image.
    """
    k = np.asarray(k, dtype=np.float64).reshape(2)
    return estimate_batch(img, k[None, :], cfg, np.array([stream.key]),
                          m=m, patch_size=patch_size, d_fail=d_fail,
                          threshold=threshold)[0]


def resolve_threads(threads: int | None = None) -> int:
    """Thread budget: explicit argument, else STABSCORE_THREADS, else 1."""
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("STABSCORE_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1
