"""Grayscale image representation, decoding, interpolation, and patch warping."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ImageFormatError, RangeError
from .homography import Homography

_GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class ImageGray:
    """Single-channel raster with luminance values in [0, 1].

    ``data`` is a read-only (height, width) float64 array in row-major
    order; instances are immutable and safe to share across threads.
    """

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D array, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("image data contains non-finite values")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("image data must lie in [0, 1]")
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class PatchSpec:
    """A square patch of odd side length centered on a continuous 2-D point."""

    center: tuple[float, float]
    size: int = 13

    def __post_init__(self):
        if self.size < 3 or self.size % 2 != 1:
            raise ValueError(f"patch size must be odd and >= 3, got {self.size}")
        cx, cy = self.center
        if not (np.isfinite(cx) and np.isfinite(cy)):
            raise ValueError("patch center must be finite")
        object.__setattr__(self, "center", (float(cx), float(cy)))


def _parse_pgm(raw: bytes) -> np.ndarray:
    header = []
    pos = 2  # past magic
    while len(header) < 3:
        match = re.match(rb"(?:\s|#[^\n]*\n)*(\d+)", raw[pos:])
        if match is None:
            raise ImageFormatError("truncated PGM header")
        header.append(int(match.group(1)))
        pos += match.end()
    width, height, maxval = header
    pos += 1  # single whitespace byte after maxval
    if maxval <= 0 or maxval > 65535:
        raise ImageFormatError(f"unsupported PGM maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    pixels = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    if pixels.size != count:
        raise ImageFormatError("PGM raster shorter than header promises")
    return pixels.reshape(height, width).astype(np.float64) / maxval


def _load_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        im.load()
        if im.mode in ("L", "P"):
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        elif im.mode in ("I", "I;16", "I;16B", "I;16L"):
            arr = np.asarray(im.convert("I"), dtype=np.float64) / 65535.0
        elif im.mode in ("RGB", "RGBA"):
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
            arr = rgb @ _GRAY_WEIGHTS
        else:
            raise ImageFormatError(f"unsupported PNG mode {im.mode!r}")
    return np.clip(arr, 0.0, 1.0)


def load_image(path) -> ImageGray:
    """Load an 8/16-bit PGM (P5) or PNG file as normalized luminance.

    Color inputs are converted with the 0.299/0.587/0.114 weights.
    """
    try:
        with open(path, "rb") as f:
            magic = f.read(8)
    except OSError as exc:
        raise ImageFormatError(f"cannot read {path}: {exc}") from None
    if magic.startswith(b"P5"):
        with open(path, "rb") as f:
            return ImageGray(_parse_pgm(f.read()))
    if magic.startswith(b"\x89PNG"):
        return ImageGray(_load_png(path))
    raise ImageFormatError(f"{path}: not a P5 PGM or PNG file")


def save_pgm(img: ImageGray, path) -> None:
    """Write an 8-bit binary PGM (useful for patch debugging)."""
    data = np.rint(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (img.width, img.height))
        f.write(data.tobytes())


def bilinear_at(data: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Bilinear samples of a 2-D array at continuous positions.

    Coordinates are clipped to the valid support (border replication);
    the returned mask marks samples that were inside it.
    """
    h, w = data.shape
    inside = (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)
    x = np.clip(np.nan_to_num(xs, nan=0.0), 0.0, w - 1.0)
    y = np.clip(np.nan_to_num(ys, nan=0.0), 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), w - 2) if w > 1 else np.zeros_like(x, dtype=np.int64)
    y0 = np.minimum(np.floor(y).astype(np.int64), h - 2) if h > 1 else np.zeros_like(y, dtype=np.int64)
    fx = x - x0
    fy = y - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    values = (
        data[y0, x0] * (1.0 - fx) * (1.0 - fy)
        + data[y0, x1] * fx * (1.0 - fy)
        + data[y1, x0] * (1.0 - fx) * fy
        + data[y1, x1] * fx * fy
    )
    return values, inside


def sample_bilinear(img: ImageGray, p) -> float:
    """Bilinear interpolation at a continuous point; exact on the lattice.

    Raises :class:`RangeError` when ``p`` lies outside
    [0, width-1] x [0, height-1].
    """
    x, y = float(p[0]), float(p[1])
    if not (0.0 <= x <= img.width - 1.0 and 0.0 <= y <= img.height - 1.0):
        raise RangeError(f"point ({x}, {y}) outside image support "
                         f"[0, {img.width - 1}] x [0, {img.height - 1}]")
    values, _ = bilinear_at(img.data, np.array([x]), np.array([y]))
    return float(values[0])


def patch_grid(size: int) -> np.ndarray:
    """Homogeneous patch-pixel offsets about the patch center, shape (size*size, 3).

    Row-major over patch pixels; offset of pixel (row r, col c)
    is (c - (size-1)/2, r - (size-1)/2, 1).
    """
    half = (size - 1) * 0.5
    cols, rows = np.meshgrid(np.arange(size, dtype=np.float64),
                             np.arange(size, dtype=np.float64))
    out = np.empty((size * size, 3))
    out[:, 0] = cols.reshape(-1) - half
    out[:, 1] = rows.reshape(-1) - half
    out[:, 2] = 1.0
    return out


@dataclass(frozen=True)
class PatchWarp:
    """A warped patch plus the fraction of samples that fell outside the image."""

    patch: ImageGray
    out_of_support: float
    # Patches whose out-of-support fraction exceeds this are considered unreliable.
    flagged: bool = field(default=False)


OUT_OF_SUPPORT_LIMIT = 0.20


def warp_patch(img: ImageGray, spec: PatchSpec, h: Homography) -> PatchWarp:
    """Resample a patch through a homography expressed in image coordinates.

    Output pixel ``x`` (patch frame, origin at the patch center) takes the
    value of ``img`` at ``h @ x_img`` where ``x_img = center + x``.  With the
    identity this is an exact crop; a detection at patch position ``p``
    therefore projects back into the image as ``h @ (center + p)``.
    Samples outside the image replicate the border and are tallied in
    ``out_of_support``.
    """
    cx, cy = spec.center
    offs = patch_grid(spec.size)
    offs_img = offs.copy()
    offs_img[:, 0] += cx
    offs_img[:, 1] += cy
    q = offs_img @ h.projective_matrix().T
    w = q[:, 2]
    if np.any(np.abs(w) < 1e-12):
        raise RangeError("patch sample maps to infinity under this homography")
    xs = q[:, 0] / w
    ys = q[:, 1] / w
    values, inside = bilinear_at(img.data, xs, ys)
    frac = 1.0 - float(inside.mean())
    patch = ImageGray(np.clip(values.reshape(spec.size, spec.size), 0.0, 1.0))
    return PatchWarp(patch=patch, out_of_support=frac,
                     flagged=frac > OUT_OF_SUPPORT_LIMIT)
