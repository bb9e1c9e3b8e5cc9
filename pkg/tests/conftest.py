"""Shared fixtures: deterministic natural and synthetic test images."""

import numpy as np
import pytest

from stabscore.image import ImageGray
from stabscore.synth import make_texture

try:
    import skimage.data as _skdata

    _HAVE_SKIMAGE = True
except ImportError:  # pragma: no cover
    _HAVE_SKIMAGE = False


def _to_gray01(arr) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim == 3:
        arr = arr[..., :3] @ np.array([0.299, 0.587, 0.114])
    arr = arr.astype(np.float64)
    if arr.max() > 1.0:
        arr = arr / 255.0
    return np.clip(arr, 0.0, 1.0)


def natural_images(count: int, size: int = 320) -> list[ImageGray]:
    """Distinct textured grayscale crops; photographs when available,
    synthetic textures otherwise."""
    crops: list[ImageGray] = []
    if _HAVE_SKIMAGE:
        sources = []
        for name in ("camera", "coins", "moon", "text", "brick", "grass",
                     "gravel", "page", "clock_motion", "coffee", "chelsea",
                     "astronaut", "rocket", "hubble_deep_field"):
            try:
                sources.append(_to_gray01(getattr(_skdata, name)()))
            except Exception:
                continue
        offsets = [(0, 0), (1, 1), (0, 1), (1, 0)]
        for src in sources:
            h, w = src.shape
            if h < size or w < size:
                continue
            for oy, ox in offsets:
                y0 = oy * (h - size) // 2
                x0 = ox * (w - size) // 2
                crop = src[y0:y0 + size, x0:x0 + size]
                if crop.std() > 0.05:  # skip near-flat crops
                    crops.append(ImageGray(crop))
                if len(crops) >= count:
                    return crops
    while len(crops) < count:
        crops.append(make_texture(1000 + len(crops), size, size))
    return crops


@pytest.fixture(scope="session")
def natural_image() -> ImageGray:
    return natural_images(1, 320)[0]


@pytest.fixture(scope="session")
def texture_image() -> ImageGray:
    return make_texture(42, 320, 320)
