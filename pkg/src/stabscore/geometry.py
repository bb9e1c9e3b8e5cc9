"""Two-view homography machinery: transfer-error log-likelihood, normalized
DLT, damped iterative refinement, RANSAC, and accuracy metrics.

Conventions: a correspondence pairs a noisy measurement ``k`` in the first
view with a reference point ``k_prime`` in the second view; estimated
homographies map ``k_prime`` to ``k``.  The likelihood treats ``k_prime``
as noise-free and weighs residuals by each correspondence's measurement
covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError
from .homography import Homography, project_many, solve_4pt
from .streams import Stream

_IDENTITY_2 = np.eye(2)


@dataclass(frozen=True)
class Correspondence:
    """A point pair with the measurement covariance of the first-view point."""

    k: tuple[float, float]
    k_prime: tuple[float, float]
    sigma: np.ndarray = field(default_factory=lambda: _IDENTITY_2.copy())

    def __post_init__(self):
        object.__setattr__(self, "k", (float(self.k[0]), float(self.k[1])))
        object.__setattr__(self, "k_prime", (float(self.k_prime[0]), float(self.k_prime[1])))
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.shape != (2, 2):
            raise ValueError(f"sigma must be 2x2, got {sigma.shape}")
        if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-12):
            raise ValueError("sigma must be symmetric")
        if sigma[0, 0] < 0 or sigma[1, 1] < 0 or np.linalg.det(sigma) < -1e-12:
            raise ValueError("sigma must be positive semidefinite")
        sigma = sigma.copy()
        sigma.flags.writeable = False
        object.__setattr__(self, "sigma", sigma)


def corr_arrays(corrs):
    """Stack correspondences into (k, k_prime, sigma) arrays."""
    k = np.array([c.k for c in corrs], dtype=np.float64).reshape(-1, 2)
    kp = np.array([c.k_prime for c in corrs], dtype=np.float64).reshape(-1, 2)
    sig = (np.stack([c.sigma for c in corrs]) if corrs
           else np.zeros((0, 2, 2)))
    return k, kp, sig


def _sigma_inverses(sig: np.ndarray) -> np.ndarray:
    a, b, c = sig[:, 0, 0], sig[:, 0, 1], sig[:, 1, 1]
    det = a * c - b * b
    scale = np.maximum(np.maximum(np.abs(a), np.abs(c)), 1e-300)
    if np.any(det <= 1e-14 * scale * scale):
        raise GeometryError("singular measurement covariance")
    inv = np.empty_like(sig)
    inv[:, 0, 0] = c / det
    inv[:, 1, 1] = a / det
    inv[:, 0, 1] = inv[:, 1, 0] = -b / det
    return inv


def transfer_log_likelihood(corrs, h: Homography) -> float:
    """Gaussian transfer-error log-likelihood of the correspondences under ``h``.

    Always <= 0, with equality exactly when every residual vanishes.
    """
    if len(corrs) == 0:
        raise ValueError("need at least one correspondence")
    k, kp, sig = corr_arrays(corrs)
    r = k - project_many(h, kp)
    inv = _sigma_inverses(sig)
    quad = (r[:, 0] ** 2 * inv[:, 0, 0]
            + 2.0 * r[:, 0] * r[:, 1] * inv[:, 0, 1]
            + r[:, 1] ** 2 * inv[:, 1, 1])
    return -0.5 * float(quad.sum())


def _hartley_normalization(pts: np.ndarray) -> np.ndarray:
    centroid = pts.mean(axis=0)
    d = np.hypot(pts[:, 0] - centroid[0], pts[:, 1] - centroid[1]).mean()
    s = np.sqrt(2.0) / max(d, 1e-12)
    t = np.array([[s, 0.0, -s * centroid[0]],
                  [0.0, s, -s * centroid[1]],
                  [0.0, 0.0, 1.0]])
    return t


def estimate_dlt(corrs) -> Homography:
    """Normalized direct linear transform from >= 4 correspondences.

    Exact (to solver precision) on 4 noise-free pairs; least-squares in the
    algebraic sense otherwise.
    """
    if len(corrs) < 4:
        raise GeometryError(f"DLT needs >= 4 correspondences, got {len(corrs)}")
    k, kp, _ = corr_arrays(corrs)
    t_dst = _hartley_normalization(k)
    t_src = _hartley_normalization(kp)
    dst = (np.c_[k, np.ones(len(k))] @ t_dst.T)[:, :2]
    src = (np.c_[kp, np.ones(len(kp))] @ t_src.T)[:, :2]
    n = src.shape[0]
    a = np.zeros((2 * n, 9))
    x, y = src[:, 0], src[:, 1]
    u, v = dst[:, 0], dst[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1.0
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1.0
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] < 1e-12 * max(sv[0], 1e-300):
        raise GeometryError("degenerate correspondence configuration")
    hn = vt[-1].reshape(3, 3)
    return Homography(np.linalg.inv(t_dst) @ hn @ t_src)


@dataclass(frozen=True)
class RefineResult:
    homography: Homography
    log_likelihood: float
    success: bool
    n_iter: int


def _whitening_factors(sig: np.ndarray) -> np.ndarray:
    """Inverse Cholesky factors W with W^T W = Sigma^{-1}, per correspondence."""
    a, b, c = sig[:, 0, 0], sig[:, 0, 1], sig[:, 1, 1]
    if np.any(a <= 0):
        raise GeometryError("singular measurement covariance")
    l11 = np.sqrt(a)
    l21 = b / l11
    rest = c - l21 * l21
    if np.any(rest <= 0):
        raise GeometryError("singular measurement covariance")
    l22 = np.sqrt(rest)
    w = np.zeros_like(sig)
    w[:, 0, 0] = 1.0 / l11
    w[:, 1, 0] = -l21 / (l11 * l22)
    w[:, 1, 1] = 1.0 / l22
    return w


def _residuals_and_jacobian(p: np.ndarray, k: np.ndarray, kp: np.ndarray,
                            w: np.ndarray, want_jacobian: bool):
    n = k.shape[0]
    x, y = kp[:, 0], kp[:, 1]
    den = p[6] * x + p[7] * y + 1.0
    if np.any(np.abs(den) < 1e-12):
        return None, None
    u = (p[0] * x + p[1] * y + p[2]) / den
    v = (p[3] * x + p[4] * y + p[5]) / den
    raw = np.stack([k[:, 0] - u, k[:, 1] - v], axis=1)
    res = np.einsum("nij,nj->ni", w, raw)
    if not want_jacobian:
        return res.reshape(-1), None
    ju = np.zeros((n, 2, 8))
    ju[:, 0, 0] = x / den
    ju[:, 0, 1] = y / den
    ju[:, 0, 2] = 1.0 / den
    ju[:, 0, 6] = -u * x / den
    ju[:, 0, 7] = -u * y / den
    ju[:, 1, 3] = x / den
    ju[:, 1, 4] = y / den
    ju[:, 1, 5] = 1.0 / den
    ju[:, 1, 6] = -v * x / den
    ju[:, 1, 7] = -v * y / den
    jac = -np.einsum("nij,njk->nik", w, ju).reshape(-1, 8)
    return res.reshape(-1), jac


def refine_homography(h0: Homography, corrs, max_iter: int = 100,
                      rel_tol: float = 1e-10,
                      damping0: float = 1e-3) -> RefineResult:
    """Maximize the transfer log-likelihood by damped least squares.

    Eight parameters (bottom-right entry pinned); diagonal damping grows
    tenfold on rejected steps and shrinks tenfold on accepted ones.  The
    returned objective never falls below the starting one; divergence
    returns the input with ``success=False``.
    """
    if len(corrs) < 4:
        raise GeometryError(f"refinement needs >= 4 correspondences, got {len(corrs)}")
    k, kp, sig = corr_arrays(corrs)
    w = _whitening_factors(sig)
    m = h0.m
    if abs(m[2, 2]) < 1e-9:
        return RefineResult(h0, transfer_log_likelihood(corrs, h0), False, 0)
    p = (m / m[2, 2]).reshape(-1)[:8].copy()

    res, jac = _residuals_and_jacobian(p, k, kp, w, True)
    if res is None or not np.all(np.isfinite(res)):
        return RefineResult(h0, -np.inf, False, 0)
    cost = 0.5 * float(res @ res)
    lam = damping0
    n_iter = 0
    while n_iter < max_iter:
        n_iter += 1
        jtj = jac.T @ jac
        g = jac.T @ res
        damped = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-12))
        try:
            step = np.linalg.solve(damped, -g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        trial = p + step
        trial_res, _ = _residuals_and_jacobian(trial, k, kp, w, False)
        if trial_res is None or not np.all(np.isfinite(trial_res)):
            lam *= 10.0
            continue
        trial_cost = 0.5 * float(trial_res @ trial_res)
        if trial_cost < cost:
            improvement = (cost - trial_cost) / max(cost, 1e-300)
            p = trial
            lam = max(lam / 10.0, 1e-12)
            res, jac = _residuals_and_jacobian(p, k, kp, w, True)
            cost = trial_cost
            if improvement < rel_tol:
                break
        else:
            lam *= 10.0
            if lam > 1e12:
                break
    m_out = np.append(p, 1.0).reshape(3, 3)
    try:
        h_out = Homography(m_out)
    except GeometryError:
        return RefineResult(h0, transfer_log_likelihood(corrs, h0), False, n_iter)
    return RefineResult(h_out, -cost, True, n_iter)


@dataclass(frozen=True)
class RansacResult:
    success: bool
    homography: Homography | None
    inlier_mask: np.ndarray
    n_hypotheses: int


def ransac(corrs, inlier_threshold: float, stream: Stream,
           confidence: float = 0.9999, max_iter: int = 200_000,
           refine: bool = True) -> RansacResult:
    """Robust homography fit by 4-point hypothesize-and-verify.

    Hypothesis ``t`` draws its minimal sample from ``stream.child(t)``, so
    the accepted model is a pure function of the seed; score ties keep the
    earlier hypothesis.  The best model is re-fit on its inliers (DLT then
    likelihood refinement) and the final mask is evaluated at the result.
    """
    n = len(corrs)
    mask_empty = np.zeros(n, dtype=bool)
    if n < 4:
        return RansacResult(False, None, mask_empty, 0)
    k, kp, _ = corr_arrays(corrs)

    best_count = 0
    best_h: Homography | None = None
    needed = max_iter
    t = 0
    while t < min(max_iter, needed):
        idx = stream.child(t).sample_distinct(n, 4)
        t += 1
        try:
            h = solve_4pt(kp[idx], k[idx])
        except GeometryError:
            continue
        pred = project_many(h, kp, on_infinity="inf")
        d = np.hypot(k[:, 0] - pred[:, 0], k[:, 1] - pred[:, 1])
        count = int((d <= inlier_threshold).sum())
        if count > best_count:
            best_count = count
            best_h = h
            ratio = count / n
            if ratio >= 1.0:
                needed = t
            else:
                denom = np.log1p(-(ratio**4))
                if denom < 0.0:
                    needed = min(max_iter, int(np.ceil(np.log(max(1.0 - confidence, 1e-300)) / denom)))

    if best_h is None or best_count < 4:
        return RansacResult(False, None, mask_empty, t)

    pred = project_many(best_h, kp, on_infinity="inf")
    d = np.hypot(k[:, 0] - pred[:, 0], k[:, 1] - pred[:, 1])
    inliers = d <= inlier_threshold
    subset = [corrs[i] for i in np.nonzero(inliers)[0]]
    final = best_h
    try:
        final = estimate_dlt(subset)
    except GeometryError:
        pass
    if refine:
        result = refine_homography(final, subset)
        if result.success:
            final = result.homography
    pred = project_many(final, kp, on_infinity="inf")
    d = np.hypot(k[:, 0] - pred[:, 0], k[:, 1] - pred[:, 1])
    return RansacResult(True, final, d <= inlier_threshold, t)


def corner_error(h_est: Homography, h_gt: Homography, extent) -> float:
    """Mean displacement of the four image corners between two mappings."""
    w, h = float(extent[0]), float(extent[1])
    corners = np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])
    a = project_many(h_est, corners)
    b = project_many(h_gt, corners)
    return float(np.hypot(a[:, 0] - b[:, 0], a[:, 1] - b[:, 1]).mean())


def write_correspondences_csv(path, corrs) -> None:
    """Rows of x1,y1,x2,y2,s11,s12,s22 (first-view point, second-view point,
    upper triangle of the first-view covariance)."""
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("x1,y1,x2,y2,s11,s12,s22\n")
        for c in corrs:
            f.write(",".join(repr(float(v)) for v in (
                c.k[0], c.k[1], c.k_prime[0], c.k_prime[1],
                c.sigma[0, 0], c.sigma[0, 1], c.sigma[1, 1])) + "\n")


def read_correspondences_csv(path) -> list[Correspondence]:
    out = []
    with open(path, "r", encoding="ascii") as f:
        first = f.readline()
        if not first.startswith("x1"):
            raise ValueError(f"{path}: missing correspondence header")
        for line in f:
            parts = line.strip().split(",")
            if len(parts) not in (4, 7):
                raise ValueError(f"{path}: expected 4 or 7 columns, got {len(parts)}")
            vals = [float(v) for v in parts]
            sigma = (np.array([[vals[4], vals[5]], [vals[5], vals[6]]])
                     if len(vals) == 7 else _IDENTITY_2.copy())
            out.append(Correspondence((vals[0], vals[1]), (vals[2], vals[3]), sigma))
    return out
