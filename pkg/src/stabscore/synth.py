"""Deterministic synthetic scenes for experiments and tests.

Textures combine multi-scale value noise with randomly placed, randomly
rotated rectangles and discs, which supplies corners of many orientations
and contrasts.  Everything derives from a :class:`~stabscore.streams.Stream`,
so scenes are bit-reproducible.
"""

from __future__ import annotations

import numpy as np

from .image import ImageGray, bilinear_at
from .streams import Stream


def _value_noise(stream: Stream, width: int, height: int, cell: int) -> np.ndarray:
    gw = width // cell + 2
    gh = height // cell + 2
    grid = stream.uniforms(gw * gh).reshape(gh, gw)
    xs, ys = np.meshgrid(np.arange(width) / cell, np.arange(height) / cell)
    values, _ = bilinear_at(grid, xs.reshape(-1), ys.reshape(-1))
    return values.reshape(height, width)


def make_texture(seed: int, width: int = 384, height: int = 384,
                 n_rects: int = 60, n_discs: int = 25) -> ImageGray:
    """A corner-rich textured scene."""
    stream = Stream(seed)
    img = np.zeros((height, width))
    weights = {64: 0.45, 32: 0.3, 16: 0.15, 8: 0.1}
    for i, (cell, wgt) in enumerate(weights.items()):
        img += wgt * _value_noise(stream.child(0, i), width, height, cell)

    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    shape_stream = stream.child(1)
    for i in range(n_rects + n_discs):
        u = shape_stream.uniforms(7)
        cx = u[0] * width
        cy = u[1] * height
        level = u[2]
        if i < n_rects:
            hu = 4.0 + u[3] * 36.0
            hv = 4.0 + u[4] * 36.0
            theta = u[5] * np.pi
            ct, st = np.cos(theta), np.sin(theta)
            ru = ct * (xs - cx) + st * (ys - cy)
            rv = -st * (xs - cx) + ct * (ys - cy)
            dist = np.maximum(np.abs(ru) - hu, np.abs(rv) - hv)
        else:
            radius = 4.0 + u[3] * 28.0
            dist = np.hypot(xs - cx, ys - cy) - radius
        alpha = np.clip(0.5 - dist, 0.0, 1.0) * (0.35 + 0.65 * u[6])
        img = img * (1.0 - alpha) + level * alpha

    lo, hi = img.min(), img.max()
    img = 0.03 + 0.94 * (img - lo) / max(hi - lo, 1e-12)
    return ImageGray(img)


def checkerboard(width: int, height: int, cell: int = 16,
                 sharpness: float = 2.0, amplitude: float = 1.0) -> ImageGray:
    """Smoothed checkerboard whose crossings sit on the integer lattice
    at multiples of ``cell``."""
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    fx = np.tanh(sharpness * np.sin(np.pi * xs / cell))
    fy = np.tanh(sharpness * np.sin(np.pi * ys / cell))
    norm = np.tanh(sharpness) ** 2
    return ImageGray(0.5 + 0.5 * amplitude * fx * fy / norm)


def corner_patch(size: int = 13, offset: tuple[float, float] = (0.0, 0.0),
                 sharpness: float = 1.5, amplitude: float = 1.0) -> ImageGray:
    """A single smoothed quadrant corner near the patch center."""
    half = (size - 1) * 0.5
    xs, ys = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64))
    fx = np.tanh(sharpness * (xs - half - offset[0]))
    fy = np.tanh(sharpness * (ys - half - offset[1]))
    return ImageGray(0.5 + 0.5 * amplitude * fx * fy)


def add_speckles(img: ImageGray, count: int, amplitude: float,
                 stream: Stream, margin: int = 16) -> tuple[ImageGray, np.ndarray]:
    """Scatter isolated single-pixel bumps; returns the image and their (x, y)."""
    data = img.data.copy()
    h, w = data.shape
    taken = set()
    positions = []
    while len(positions) < count:
        u = stream.uniforms(2)
        x = margin + int(u[0] * (w - 2 * margin))
        y = margin + int(u[1] * (h - 2 * margin))
        cell = (x // 4, y // 4)  # keep speckles isolated from each other
        if cell in taken:
            continue
        taken.add(cell)
        positions.append((x, y))
        data[y, x] = np.clip(data[y, x] + amplitude, 0.0, 1.0)
    return ImageGray(data), np.array(positions, dtype=np.float64)


def linear_ramp(width: int, height: int, gx: float, gy: float,
                offset: float = 0.5) -> ImageGray:
    """The plane offset + gx*x + gy*y, clipped to [0, 1]."""
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    return ImageGray(np.clip(offset + gx * xs + gy * ys, 0.0, 1.0))
