"""Planar homographies: exact 4-point solving, projection, and the
difficulty-parameterized random generator used for synthetic viewpoint change.

The generator perturbs the corners of a fixed square.  Four independent
displacement magnitudes are drawn per sample, each scaled by a uniform
variate and capped at ``half_extent * (1 - 1/beta)``, so ``beta = 1``
always yields the identity and larger ``beta`` strictly increases the
difficulty of the sampled viewpoint change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .streams import Stream, child_keys, raw_draws, to_sign, to_uniform

_W_EPS = 1e-12


def _normalize_matrix(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    nrm = np.linalg.norm(m)
    if not np.isfinite(nrm) or nrm == 0.0:
        raise GeometryError("homography matrix is zero or non-finite")
    m = m / nrm
    if m[2, 2] < 0.0:
        m = -m
    return m


@dataclass(frozen=True)
class Homography:
    """A 3x3 invertible projective transform.

    The stored matrix is canonicalized to unit Frobenius norm with a
    positive bottom-right entry (when that entry is nonzero).
    """

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise GeometryError(f"expected a 3x3 matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise GeometryError("homography matrix has non-finite entries")
        m = _normalize_matrix(m)
        if abs(np.linalg.det(m)) < 1e-12:
            raise GeometryError("homography matrix is singular")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        m = np.eye(3)
        m[0, 2] = tx
        m[1, 2] = ty
        return cls(m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def __matmul__(self, other: "Homography") -> "Homography":
        return Homography(self.m @ other.m)

    def projective_matrix(self) -> np.ndarray:
        """The matrix rescaled to a unit bottom-right entry when possible.

        Projection through this form is exact for lattice-preserving
        transforms (identity, power-of-two translations), which the unit
        Frobenius canonical form is not.
        """
        m = self.m
        if abs(m[2, 2]) > 1e-9:
            return m / m[2, 2]
        return m


def project(h: Homography, p) -> np.ndarray:
    """Apply ``h`` to a 2-D point with perspective division."""
    p = np.asarray(p, dtype=np.float64)
    m = h.projective_matrix()
    w = m[2, 0] * p[0] + m[2, 1] * p[1] + m[2, 2]
    if abs(w) < _W_EPS:
        raise GeometryError("point maps to infinity under this homography")
    x = (m[0, 0] * p[0] + m[0, 1] * p[1] + m[0, 2]) / w
    y = (m[1, 0] * p[0] + m[1, 1] * p[1] + m[1, 2]) / w
    return np.array([x, y])


def project_many(h: Homography, pts: np.ndarray, on_infinity: str = "raise") -> np.ndarray:
    """Apply ``h`` to an (N, 2) array of points.

    ``on_infinity`` selects the treatment of points whose homogeneous
    scale vanishes: ``"raise"`` signals a :class:`GeometryError`,
    ``"inf"`` returns infinities for those rows (useful in robust loops).
    """
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("pts must have shape (N, 2)")
    m = h.projective_matrix()
    w = pts @ m[2, :2] + m[2, 2]
    bad = np.abs(w) < _W_EPS
    if bad.any():
        if on_infinity == "raise":
            raise GeometryError("a point maps to infinity under this homography")
        w = np.where(bad, 1.0, w)
    out = np.empty_like(pts)
    out[:, 0] = (pts @ m[0, :2] + m[0, 2]) / w
    out[:, 1] = (pts @ m[1, :2] + m[1, 2]) / w
    if bad.any():
        out[bad] = np.inf
    return out


def _collinear(p: np.ndarray) -> bool:
    """True if any 3 of the 4 points are (nearly) collinear."""
    scale = max(float(np.abs(p).max()), 1.0)
    for drop in range(4):
        q = np.delete(p, drop, axis=0)
        area2 = abs(
            (q[1, 0] - q[0, 0]) * (q[2, 1] - q[0, 1])
            - (q[2, 0] - q[0, 0]) * (q[1, 1] - q[0, 1])
        )
        if area2 < 1e-10 * scale * scale:
            return True
    return False


def _solve_4pt_svd(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    a = np.zeros((8, 9))
    for i in range(4):
        x, y = src[i]
        u, v = dst[i]
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y, -u]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y, -v]
    _, _, vt = np.linalg.svd(a)
    return vt[-1].reshape(3, 3)


def _build_4pt_system(src: np.ndarray, dst: np.ndarray):
    """Linear system for the 8 unknowns of H with h33 fixed to 1."""
    b = dst.shape[0] if dst.ndim == 3 else 1
    dst3 = dst.reshape(b, 4, 2)
    a = np.zeros((b, 8, 8))
    rhs = np.empty((b, 8))
    x, y = src[:, 0], src[:, 1]
    u = dst3[:, :, 0]
    v = dst3[:, :, 1]
    for i in range(4):
        a[:, 2 * i, 0] = x[i]
        a[:, 2 * i, 1] = y[i]
        a[:, 2 * i, 2] = 1.0
        a[:, 2 * i, 6] = -u[:, i] * x[i]
        a[:, 2 * i, 7] = -u[:, i] * y[i]
        a[:, 2 * i + 1, 3] = x[i]
        a[:, 2 * i + 1, 4] = y[i]
        a[:, 2 * i + 1, 5] = 1.0
        a[:, 2 * i + 1, 6] = -v[:, i] * x[i]
        a[:, 2 * i + 1, 7] = -v[:, i] * y[i]
        rhs[:, 2 * i] = u[:, i]
        rhs[:, 2 * i + 1] = v[:, i]
    return a, rhs


def _reprojection_residual(m: np.ndarray, src: np.ndarray, dst: np.ndarray) -> float:
    w = src @ m[2, :2] + m[2, 2]
    if np.any(np.abs(w) < _W_EPS) or not np.all(np.isfinite(m)):
        return np.inf
    px = (src @ m[0, :2] + m[0, 2]) / w
    py = (src @ m[1, :2] + m[1, 2]) / w
    return float(np.hypot(px - dst[:, 0], py - dst[:, 1]).max())


def solve_4pt(src, dst) -> Homography:
    """Exact homography through 4 point correspondences.

    Solves the 8-unknown linear system (bottom-right entry pinned), falling
    back to the SVD null-space formulation when that parameterization is
    ill-conditioned.  Raises :class:`GeometryError` on degenerate input.
    """
    src = np.asarray(src, dtype=np.float64).reshape(4, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(4, 2)
    if _collinear(src) or _collinear(dst):
        raise GeometryError("three of the four points are collinear")
    scale = max(float(np.abs(src).max()), float(np.abs(dst).max()), 1.0)
    a, rhs = _build_4pt_system(src, dst)
    try:
        h = np.linalg.solve(a[0], rhs[0])
        m = np.append(h, 1.0).reshape(3, 3)
    except np.linalg.LinAlgError:
        m = None
    if m is None or _reprojection_residual(m, src, dst) > 1e-6 * scale:
        m = _solve_4pt_svd(src, dst)
        if _reprojection_residual(m, src, dst) > 1e-6 * scale:
            raise GeometryError("4-point configuration is numerically degenerate")
    return Homography(m)


@dataclass(frozen=True)
class BetaConfig:
    """Sampling configuration for the random homography generator.

    ``beta`` controls viewpoint difficulty (>= 1, identity at 1);
    ``half_extent`` is the half-side in pixels of the fixed square whose
    corners get displaced.
    """

    beta: float = 2.828
    half_extent: float = 6.0

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta < 1.0:
            raise ValueError(f"beta must be finite and >= 1, got {self.beta}")
        if not np.isfinite(self.half_extent) or self.half_extent <= 0.0:
            raise ValueError(f"half_extent must be positive, got {self.half_extent}")

    @property
    def d_max(self) -> float:
        """Maximum corner displacement magnitude in pixels."""
        return self.half_extent * (1.0 - 1.0 / self.beta)


# Standard difficulty sweep: quarter-octave steps 2^(k/4) for k = 1..8.
BETA_GRID = (1.189, 1.414, 1.681, 2.0, 2.378, 2.828, 3.363, 4.0)


def square_corners(half_extent: float) -> np.ndarray:
    """Corners of the centered square: top-left, top-right, bottom-right,
    bottom-left, with the y axis pointing down."""
    h = float(half_extent)
    return np.array([[-h, -h], [h, -h], [h, h], [-h, h]])


def perturbed_corners(z: np.ndarray, signs: np.ndarray, cfg: BetaConfig) -> np.ndarray:
    """Displaced square corners for uniform draws ``z`` and fair ``signs``.

    Displacement layout (one magnitude ``z[j] * d_max`` each):
      0 - left lateral: both left corners shift horizontally together;
      1 - right lateral: both right corners shift horizontally together;
      2 - left perspective: left corners shift vertically in opposition;
      3 - right perspective: right corners shift vertically in opposition.
    Corners never leave their quadrants, so the quad stays convex and the
    resulting transform is always a proper (non-reflecting) perspectivity.
    """
    z = np.asarray(z, dtype=np.float64).reshape(-1, 4)
    signs = np.asarray(signs, dtype=np.float64).reshape(-1, 4)
    d = cfg.d_max
    lat_l = signs[:, 0] * z[:, 0] * d
    lat_r = signs[:, 1] * z[:, 1] * d
    per_l = signs[:, 2] * z[:, 2] * d
    per_r = signs[:, 3] * z[:, 3] * d
    h = cfg.half_extent
    out = np.empty((z.shape[0], 4, 2))
    out[:, 0, 0] = -h + lat_l
    out[:, 0, 1] = -h + per_l
    out[:, 1, 0] = h + lat_r
    out[:, 1, 1] = -h + per_r
    out[:, 2, 0] = h + lat_r
    out[:, 2, 1] = h - per_r
    out[:, 3, 0] = -h + lat_l
    out[:, 3, 1] = h - per_l
    return out


def generate_batch(keys: np.ndarray, cfg: BetaConfig) -> np.ndarray:
    """Matrices (B, 3, 3) for one generator draw per key.

    Each key consumes draw counters 0..3 for the magnitudes and 4..7 for
    the signs, matching :func:`generate` on a fresh stream bit for bit.
    """
    keys = np.asarray(keys, dtype=np.uint64).reshape(-1)
    b = keys.shape[0]
    ticks = np.arange(8, dtype=np.uint64)
    u = raw_draws(keys[:, None], ticks[None, :])
    z = to_uniform(u[:, :4])
    signs = to_sign(u[:, 4:])
    dst = perturbed_corners(z, signs, cfg)
    src = square_corners(cfg.half_extent)
    a, rhs = _build_4pt_system(src, dst)
    h8 = np.linalg.solve(a, rhs[..., None])[..., 0]
    m = np.empty((b, 3, 3))
    m[:, :2, :] = h8[:, :6].reshape(b, 2, 3)
    m[:, 2, :2] = h8[:, 6:]
    m[:, 2, 2] = 1.0
    return m


def generate(stream: Stream, cfg: BetaConfig) -> Homography:
    """Draw one random homography from the beta-difficulty family.

    Consumes 8 draws from ``stream``: four U(0,1) magnitudes followed by
    four fair sign bits.  ``beta = 1`` returns the identity.
    """
    z = stream.uniforms(4)
    signs = stream.signs(4)
    dst = perturbed_corners(z, signs, cfg)[0]
    src = square_corners(cfg.half_extent)
    return solve_4pt(src, dst)


def generator_keys(stream: Stream, count: int) -> np.ndarray:
    """Child keys for ``count`` generator draws, one per sample index.

    ``generate_batch(generator_keys(s, m), cfg)[j]`` equals
    ``generate(s.child(j), cfg)`` up to matrix normalization.
    """
    return child_keys(stream.key, np.arange(count))


def conjugate_about(h: Homography, center) -> Homography:
    """Express a square-centered transform in image coordinates about ``center``."""
    cx, cy = float(center[0]), float(center[1])
    t = np.eye(3)
    t[0, 2] = cx
    t[1, 2] = cy
    t_inv = np.eye(3)
    t_inv[0, 2] = -cx
    t_inv[1, 2] = -cy
    return Homography(t @ h.m @ t_inv)


def to_text(h: Homography) -> str:
    """Serialize as 9 ASCII floats, row-major, one per line."""
    return "\n".join(repr(float(v)) for v in h.m.reshape(-1)) + "\n"


def from_text(text: str) -> Homography:
    values = text.split()
    if len(values) != 9:
        raise ValueError(f"expected 9 floats, found {len(values)} tokens")
    try:
        m = np.array([float(v) for v in values]).reshape(3, 3)
    except ValueError as exc:
        raise ValueError(f"could not parse homography text: {exc}") from None
    return Homography(m)


def save(h: Homography, path) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(to_text(h))


def load(path) -> Homography:
    with open(path, "r", encoding="ascii") as f:
        try:
            return from_text(f.read())
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from None
