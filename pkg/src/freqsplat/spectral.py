"""Fourier amplitude/phase discrepancies with a low-to-high annealed band.

Spectra are unnormalized forward DFTs, shifted so the DC term sits at
``(H // 2, W // 2)``.  Radii are measured in bin units from that origin and the
largest radius is ``D = sqrt((H/2)^2 + (W/2)^2)``.

The progressive loss compares a rendered image with ground truth inside a
fixed low-pass disc (radius ``D0``) from the start, and inside a high-pass
annulus ``D0 < r <= D_t`` once ``t > T0``, where ``D_t`` ramps linearly to
``D`` at ``t = T``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numba
import numpy as np
import scipy.fft as sp_fft
from numba import njit

from .errors import ParameterError, ShapeError

AMP_EPS = 1e-12


def _as_hwc(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3:
        raise ShapeError(f"expected an (H, W) or (H, W, C) image, got shape {image.shape}")
    return image


def _workers() -> int:
    # follow the rasterizer pool size; per-transform results do not depend on it
    return numba.get_num_threads()


def max_radius(dims) -> float:
    h, w = dims[0], dims[1]
    return math.hypot(h / 2.0, w / 2.0)


def dft2(image) -> np.ndarray:
    """Centered per-channel 2D DFT, complex array of shape (H, W, C)."""
    image = _as_hwc(image)
    h, w, _ = image.shape
    if h < 2 or w < 2:
        raise ParameterError(f"DFT needs H, W >= 2, got {(h, w)}")
    spec = sp_fft.fft2(image, axes=(0, 1), workers=_workers())
    return np.fft.fftshift(spec, axes=(0, 1))


def amplitude(spectrum) -> np.ndarray:
    return np.abs(spectrum)


def phase(spectrum) -> np.ndarray:
    """Four-quadrant angle in (-pi, pi]; zero where the amplitude vanishes."""
    spectrum = np.asarray(spectrum)
    ang = np.arctan2(spectrum.imag, spectrum.real)
    ang = np.where(ang == -np.pi, np.pi, ang)  # -0.0 imaginary parts
    return np.where(np.abs(spectrum) > AMP_EPS, ang, 0.0)


def wrap_angle(x):
    """Map angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - x, 2.0 * np.pi)


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def _as_spec(s):
    s = np.asarray(s)
    return s[:, :, None] if s.ndim == 2 else s


def amp_discrepancy(spec, spec_hat) -> float:
    spec, spec_hat = _as_spec(spec), _as_spec(spec_hat)
    _check_pair(spec, spec_hat)
    h, w, _ = spec.shape
    per_channel = np.abs(np.abs(spec) - np.abs(spec_hat)).sum(axis=(0, 1)) / math.sqrt(h * w)
    return float(per_channel.mean())


def phase_discrepancy(spec, spec_hat) -> float:
    spec, spec_hat = _as_spec(spec), _as_spec(spec_hat)
    _check_pair(spec, spec_hat)
    h, w, _ = spec.shape
    both = (np.abs(spec) > AMP_EPS) & (np.abs(spec_hat) > AMP_EPS)
    diff = np.where(both, np.abs(wrap_angle(phase(spec) - phase(spec_hat))), 0.0)
    return float((diff.sum(axis=(0, 1)) / math.sqrt(h * w)).mean())


@functools.lru_cache(maxsize=8)
def _radius_grid(h: int, w: int) -> np.ndarray:
    rows = np.arange(h) - h // 2
    cols = np.arange(w) - w // 2
    grid = np.hypot(rows[:, None], cols[None, :])
    grid.flags.writeable = False
    return grid


def radius_grid(dims) -> np.ndarray:
    return _radius_grid(int(dims[0]), int(dims[1]))


@dataclass(frozen=True)
class FilterMask:
    mask: np.ndarray
    kind: str
    inner: float
    outer: float


def make_lowpass(d0: float, dims) -> FilterMask:
    d_max = max_radius(dims)
    if not 0.0 < d0 <= d_max + 1e-12:
        raise ParameterError(f"low-pass radius must satisfy 0 < D0 <= D={d_max}, got {d0}")
    mask = (radius_grid(dims) <= d0).astype(np.float64)
    return FilterMask(mask, "low-pass", 0.0, d0)


def make_highpass(d_t: float, d0: float, dims) -> FilterMask:
    d_max = max_radius(dims)
    if not 0.0 < d0 <= d_t <= d_max + 1e-12:
        raise ParameterError(
            f"high-pass radii must satisfy 0 < D0 <= D_t <= D={d_max}, got D0={d0}, D_t={d_t}")
    r = radius_grid(dims)
    mask = ((r > d0) & (r <= d_t)).astype(np.float64)
    return FilterMask(mask, "high-pass", d0, d_t)


@dataclass(frozen=True)
class AnnealSchedule:
    """Band schedule: high band opens at ``t0`` and reaches radius ``d_max`` at ``t_end``."""

    t0: int
    t_end: int
    d0: float
    d_max: float
    w_low: float
    w_high: float

    def __post_init__(self):
        if not 0 < self.t0 < self.t_end:
            raise ParameterError(f"need 0 < T0 < T, got T0={self.t0}, T={self.t_end}")
        if not 0.0 < self.d0 <= self.d_max:
            raise ParameterError(f"need 0 < D0 <= D, got D0={self.d0}, D={self.d_max}")
        if self.w_low < 0 or self.w_high < 0:
            raise ParameterError("band weights must be non-negative")

    @classmethod
    def for_dims(cls, dims, t0, t_end, d0_frac=0.2, w_low=1e-3, w_high=1e-3):
        d_max = max_radius(dims)
        return cls(int(t0), int(t_end), d0_frac * d_max, d_max, float(w_low), float(w_high))


def band_radius(t: float, schedule: AnnealSchedule) -> float:
    """Upper envelope of the annealed band, clamped to [D0, D]."""
    s = schedule
    if t <= s.t0:
        return s.d0
    if t >= s.t_end:
        return s.d_max
    return s.d0 + (t - s.t0) * (s.d_max - s.d0) / (s.t_end - s.t0)


@dataclass(frozen=True)
class FreqParts:
    d_la: float
    d_lp: float
    d_ha: float
    d_hp: float
    high_active: bool


class SpectralTarget:
    """Ground-truth spectrum cached across iterations."""

    def __init__(self, truth):
        truth = _as_hwc(truth)
        self.shape = truth.shape
        f = dft2(truth)
        self.amp = np.abs(f)
        self.phase = phase(f)


@njit(cache=True)
def _band_kernel(f_hat, amp_hat, ph_hat, amp, ph, band, w_low, w_high, norm):
    # band: 0 outside both masks, 1 low-pass disc, 2 high-pass annulus
    h, w, c = f_hat.shape
    sums = np.zeros(4)
    grad = np.zeros((h, w, c), dtype=np.complex128)
    for i in range(h):
        for j in range(w):
            b = band[i, j]
            if b == 0:
                continue
            wgt = (w_low if b == 1 else w_high) * norm
            for ch in range(c):
                fh = f_hat[i, j, ch]
                ah = amp_hat[i, j, ch]
                at = amp[i, j, ch]
                diff = ah - at
                sums[2 * (b - 1)] += abs(diff)
                if ah <= AMP_EPS:
                    continue
                g = wgt * np.sign(diff) * fh / ah
                if at > AMP_EPS:
                    d = math.pi - ((math.pi - (ph_hat[i, j, ch] - ph[i, j, ch])) % (2.0 * math.pi))
                    sums[2 * (b - 1) + 1] += abs(d)
                    g += wgt * np.sign(d) * 1j * fh / (ah * ah)
                grad[i, j, ch] = g
    return sums * norm, grad


def _band_map(t, schedule, dims):
    low = make_lowpass(schedule.d0, dims).mask
    band = low.astype(np.int8)
    high_active = t > schedule.t0
    if high_active:
        high = make_highpass(band_radius(t, schedule), schedule.d0, dims).mask
        band[high > 0] = 2
    return band, high_active


def freq_loss_and_grad(rendered, truth, t, schedule: AnnealSchedule, need_grad=True):
    """``(L_f, parts, dL_f/drendered)``; ``truth`` may be a :class:`SpectralTarget`."""
    target = truth if isinstance(truth, SpectralTarget) else SpectralTarget(truth)
    rendered_hwc = _as_hwc(rendered)
    if rendered_hwc.shape != target.shape:
        raise ShapeError(f"shape mismatch: {rendered_hwc.shape} vs {target.shape}")
    h, w, c = target.shape
    band, high_active = _band_map(t, schedule, (h, w))
    f_hat = dft2(rendered_hwc)
    # amplitude and phase computed exactly as for the target, so equal images give exactly 0
    sums, g = _band_kernel(f_hat, np.abs(f_hat), phase(f_hat), target.amp, target.phase, band,
                           schedule.w_low, schedule.w_high, 1.0 / (math.sqrt(h * w) * c))
    d_la, d_lp, d_ha, d_hp = (float(v) for v in sums)
    loss = schedule.w_low * (d_la + d_lp)
    if high_active:
        loss += schedule.w_high * (d_ha + d_hp)
    parts = FreqParts(d_la, d_lp, d_ha, d_hp, high_active)
    if not need_grad:
        return loss, parts, None
    # dL/dI(x) = Re sum_k G_k exp(+i theta_kx) = Re(HW * ifft2(G))
    g = np.fft.ifftshift(g, axes=(0, 1))
    grad = np.real(sp_fft.ifft2(g, axes=(0, 1), workers=_workers())) * (h * w)
    if np.asarray(rendered).ndim == 2:
        grad = grad[:, :, 0]
    return loss, parts, grad


def freq_loss(rendered, truth, t, schedule: AnnealSchedule):
    """Progressive frequency loss and its four band discrepancies."""
    loss, parts, _ = freq_loss_and_grad(rendered, truth, t, schedule, need_grad=False)
    return loss, parts


def freq_loss_backward(rendered, truth, t, schedule: AnnealSchedule) -> np.ndarray:
    """Gradient of :func:`freq_loss` with respect to the rendered pixels."""
    return freq_loss_and_grad(rendered, truth, t, schedule)[2]


def log_amplitude_image(image) -> np.ndarray:
    """Centered ``log(1 + |F|)`` averaged over channels, as an (H, W) array."""
    return np.log1p(np.abs(dft2(image))).mean(axis=2)
