"""Pixel-space losses and quality metrics: L1, SSIM / D-SSIM, PSNR.

SSIM uses an 11x11 Gaussian window (sigma 1.5) evaluated only where the window
fits inside the image ("valid" region), with C1 = 0.01^2 and C2 = 0.03^2 for
intensities in [0, 1], averaged over the map and over channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ParameterError, ShapeError

WINDOW = 11
WINDOW_SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2
PSNR_CAP = 100.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def l1(a, b):
    """Mean absolute error and its (sub)gradient with respect to ``a``."""
    a, b = _pair(a, b)
    diff = a - b
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def _gauss_kernel():
    x = np.arange(WINDOW) - WINDOW // 2
    k = np.exp(-(x**2) / (2.0 * WINDOW_SIGMA**2))
    return k / k.sum()


_KERNEL = _gauss_kernel()


@njit(cache=True)
def _filter_valid(x, kernel):
    # x: (M, H, W) -> (M, H - K + 1, W - K + 1), separable valid correlation
    m, h, w = x.shape
    k = kernel.shape[0]
    tmp = np.zeros((m, h, w - k + 1))
    for a in range(m):
        for i in range(h):
            for t in range(k):
                kt = kernel[t]
                for j in range(w - k + 1):
                    tmp[a, i, j] += kt * x[a, i, j + t]
    out = np.zeros((m, h - k + 1, w - k + 1))
    for a in range(m):
        for i in range(h - k + 1):
            for t in range(k):
                kt = kernel[t]
                for j in range(w - k + 1):
                    out[a, i, j] += kt * tmp[a, i + t, j]
    return out


@njit(cache=True)
def _filter_valid_adjoint(g, kernel):
    # transpose of _filter_valid: (M, Hv, Wv) -> (M, Hv + K - 1, Wv + K - 1)
    m, hv, wv = g.shape
    k = kernel.shape[0]
    tmp = np.zeros((m, hv + k - 1, wv))
    for a in range(m):
        for i in range(hv):
            for t in range(k):
                kt = kernel[t]
                for j in range(wv):
                    tmp[a, i + t, j] += kt * g[a, i, j]
    out = np.zeros((m, hv + k - 1, wv + k - 1))
    for a in range(m):
        for i in range(hv + k - 1):
            for t in range(k):
                kt = kernel[t]
                for j in range(wv):
                    out[a, i, j + t] += kt * tmp[a, i, j]
    return out


def _chw(a):
    a = a[:, :, None] if a.ndim == 2 else a
    return np.ascontiguousarray(a.transpose(2, 0, 1))


@njit(cache=True)
def _ssim_map(stats, c, want_partials):
    # stats rows: mu_a, mu_b, E[a^2], E[b^2], E[ab], each c channels
    _, h, w = stats.shape
    smap = np.empty((c, h, w))
    partials = np.empty((3 * c, h, w) if want_partials else (0, h, w))
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                mu_a = stats[ch, i, j]
                mu_b = stats[c + ch, i, j]
                var_a = stats[2 * c + ch, i, j] - mu_a * mu_a
                var_b = stats[3 * c + ch, i, j] - mu_b * mu_b
                cov = stats[4 * c + ch, i, j] - mu_a * mu_b
                num1 = 2.0 * mu_a * mu_b + C1
                num2 = 2.0 * cov + C2
                den1 = mu_a * mu_a + mu_b * mu_b + C1
                den2 = var_a + var_b + C2
                sv = num1 * num2 / (den1 * den2)
                smap[ch, i, j] = sv
                if want_partials:
                    # d map / d mu_a, d E[a^2], d E[ab] with the variances expanded
                    partials[ch, i, j] = (2.0 * mu_b * (num2 - num1)) / (den1 * den2) \
                        - sv * (2.0 * mu_a / den1 - 2.0 * mu_a / den2)
                    partials[c + ch, i, j] = -sv / den2
                    partials[2 * c + ch, i, j] = 2.0 * num1 / (den1 * den2)
    return smap, partials


def _ssim_parts(a, b, want_partials):
    a, b = _pair(a, b)
    a, b = _chw(a), _chw(b)
    if a.shape[1] < WINDOW or a.shape[2] < WINDOW:
        raise ParameterError(f"SSIM needs H, W >= {WINDOW}, got {a.shape[1:]}")
    c = a.shape[0]
    stats = _filter_valid(np.concatenate([a, b, a * a, b * b, a * b]), _KERNEL)
    smap, partials = _ssim_map(stats, c, want_partials)
    return a, b, smap, partials


def ssim(a, b) -> float:
    return float(_ssim_parts(a, b, False)[2].mean())


def d_ssim(a, b):
    """``(1 - SSIM) / 2`` and its gradient with respect to ``a``."""
    value, grad = ssim_with_grad(a, b)
    return (1.0 - value) / 2.0, -0.5 * grad


def ssim_with_grad(a, b):
    """SSIM and its gradient with respect to ``a``."""
    ndim = np.asarray(a).ndim
    a, b, smap, partials = _ssim_parts(a, b, True)
    c = a.shape[0]
    back = _filter_valid_adjoint(partials * (1.0 / smap.size), _KERNEL)
    grad = back[:c] + 2.0 * a * back[c:2 * c] + b * back[2 * c:]
    grad = grad.transpose(1, 2, 0)
    return float(smap.mean()), grad[:, :, 0] if ndim == 2 else np.ascontiguousarray(grad)


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    l1: float


def report(a, b) -> MetricReport:
    return MetricReport(psnr=psnr(a, b), ssim=ssim(a, b), l1=l1(a, b)[0])
