"""Synthetic targets: fine texture embedded in a smooth background.

Each fixture returns an ``(H, W, 3)`` image in [0, 1] and two disjoint boolean
masks: ``"high"`` labels the textured (over-reconstruction-prone) region and
``"smooth"`` the background away from it.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ParameterError

FIXTURES = ("checker-grass", "stripes-multiscale", "textured-patch")


def _background(h, w, rng):
    yy, xx = np.mgrid[0:h, 0:w] / np.array([h, w]).reshape(2, 1, 1)
    base = rng.uniform(0.25, 0.75, size=3)
    tilt = rng.uniform(-0.1, 0.1, size=(2, 3))
    img = base + xx[..., None] * tilt[0] + yy[..., None] * tilt[1]
    blob = np.exp(-(((xx - rng.uniform(0.2, 0.8)) ** 2 + (yy - rng.uniform(0.2, 0.8)) ** 2) / 0.08))
    img += blob[..., None] * rng.uniform(-0.1, 0.1, size=3)
    return img


def _region(h, w, rng, frac=0.45):
    rh, rw = int(h * frac), int(w * frac)
    r0 = int(rng.integers(h // 8, h - rh - h // 8 + 1))
    c0 = int(rng.integers(w // 8, w - rw - w // 8 + 1))
    mask = np.zeros((h, w), dtype=bool)
    mask[r0:r0 + rh, c0:c0 + rw] = True
    return mask


def _band_noise(h, w, rng, sigma):
    noise = gaussian_filter(rng.standard_normal((h, w)), sigma, mode="wrap")
    return noise / (noise.std() + 1e-12)


def _texture(name, h, w, rng):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if name == "checker-grass":
        period = max(4, min(h, w) // 32)
        checker = ((xx // period + yy // period) % 2) * 2.0 - 1.0
        blades = _band_noise(h, w, rng, 0.8)
        lum = 0.6 * checker + 0.4 * blades
        tint = np.array([0.35, 0.55, 0.25])
    elif name == "stripes-multiscale":
        angle = rng.uniform(0, np.pi)
        u = xx * np.cos(angle) + yy * np.sin(angle)
        v = -xx * np.sin(angle) + yy * np.cos(angle)
        lum = 0.5 * np.sin(2 * np.pi * u / 6.0) + 0.3 * np.sin(2 * np.pi * v / 14.0) \
            + 0.2 * np.sin(2 * np.pi * (u + v) / 3.5)
        tint = rng.uniform(0.3, 0.7, size=3)
    elif name == "textured-patch":
        lum = 0.7 * _band_noise(h, w, rng, 1.0) + 0.3 * _band_noise(h, w, rng, 3.0)
        lum = np.clip(lum / (2.0 * lum.std()), -1.0, 1.0)  # keep contrast despite rare peaks
        tint = rng.uniform(0.3, 0.7, size=3)
    else:
        raise ParameterError(f"unknown fixture {name!r}; choose from {FIXTURES}")
    lum = lum / (np.abs(lum).max() + 1e-12)
    return tint + 0.3 * lum[..., None]


def make_fixture(name: str, dims=(256, 256), seed: int = 0):
    """``(image, {"high": mask, "smooth": mask})`` for the named fixture."""
    if name not in FIXTURES:
        raise ParameterError(f"unknown fixture {name!r}; choose from {FIXTURES}")
    h, w = int(dims[0]), int(dims[1])
    if h < 16 or w < 16:
        raise ParameterError(f"fixture dims must be at least 16x16, got {(h, w)}")
    rng = np.random.default_rng([seed, FIXTURES.index(name)])
    high = _region(h, w, rng)
    background = _background(h, w, rng)
    texture = _texture(name, h, w, rng)
    # soft 2-pixel edge so the patch boundary is not itself a hard step
    weight = gaussian_filter(high.astype(np.float64), 1.0)
    image = np.clip(background * (1 - weight[..., None]) + texture * weight[..., None], 0.0, 1.0)
    margin = gaussian_filter(high.astype(np.float64), 4.0) > 1e-3
    smooth = ~margin
    return image, {"high": high, "smooth": smooth}
