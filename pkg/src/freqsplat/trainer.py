"""Optimization loop: pixel losses + progressive frequency loss + densification.

Protocol: the first ``warmup_iters`` iterations fit a ``warmup_scale``-times
downsampled target, then the field is rescaled to full resolution.  Splats are
densified and pruned every ``densify_interval`` iterations after warmup until
``densify_end``; the frequency loss is active for ``t <= densify_end`` only.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import densify as dens
from . import metrics, spectral
from .errors import ParameterError, ShapeError, TrainingDiverged
from .field import PARAM_GROUPS, SplatField, init_field
from .raster import render, render_backward

log = logging.getLogger(__name__)

FREQ_MODES = ("none", "full", "progressive")


@dataclass
class TrainConfig:
    total_iters: int = 2000
    densify_end: int | None = None  # default total_iters // 2
    warmup_iters: int = 500
    warmup_scale: int = 4
    init_count: int = 256
    # frequency regularization: "none" (Base), "full" (whole spectrum, no
    # annealing) or "progressive" (low band, then annealed high band)
    freq_mode: str = "progressive"
    anneal_t0: int | None = None  # default densify_end // 5
    anneal_t_end: int | None = None  # default densify_end
    d0_frac: float = 0.2
    w_low: float = 1e-3
    w_high: float = 1e-3
    lambda_dssim: float = 0.2
    lr_pos: float = 1.6e-4  # times the canvas diagonal
    lr_pos_final_frac: float = 0.01
    lr_log_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity_logit: float = 5e-2
    lr_color: float = 2.5e-3
    lr_depth: float = 1e-3
    tau_pos: float = 2e-4
    tau_mult: float = 1.25  # applied to tau_pos when freq_mode != "none"
    densify_interval: int = 100
    split_frac: float = 0.01  # split threshold as a fraction of the canvas diagonal
    eps_opacity: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.densify_end is None:
            self.densify_end = self.total_iters // 2
        if self.anneal_t_end is None:
            self.anneal_t_end = self.densify_end
        if self.anneal_t0 is None:
            self.anneal_t0 = max(1, self.densify_end // 5)

    def validate(self):
        if self.total_iters < 0:
            raise ParameterError("total_iters must be >= 0")
        if self.freq_mode not in FREQ_MODES:
            raise ParameterError(f"freq_mode must be one of {FREQ_MODES}, got {self.freq_mode!r}")
        if self.init_count < 1:
            raise ParameterError("init_count must be >= 1")
        if self.warmup_scale < 1:
            raise ParameterError("warmup_scale must be >= 1")
        if self.densify_interval < 1:
            raise ParameterError("densify_interval must be >= 1")
        if self.total_iters == 0:
            return
        if not 0 <= self.warmup_iters < self.densify_end < self.total_iters:
            raise ParameterError(
                "need warmup_iters < densify_end < total_iters, got "
                f"{self.warmup_iters}, {self.densify_end}, {self.total_iters}")
        if not 0 < self.anneal_t0 < self.anneal_t_end <= self.densify_end:
            raise ParameterError("need 0 < anneal_t0 < anneal_t_end <= densify_end")
        if not 0.0 < self.d0_frac <= 1.0:
            raise ParameterError("d0_frac must lie in (0, 1]")

    @property
    def effective_tau(self) -> float:
        return self.tau_pos * (self.tau_mult if self.freq_mode != "none" else 1.0)

    def schedule(self, dims) -> spectral.AnnealSchedule:
        d0_frac = 1.0 if self.freq_mode == "full" else self.d0_frac
        return spectral.AnnealSchedule.for_dims(
            dims, self.anneal_t0, self.anneal_t_end, d0_frac, self.w_low, self.w_high)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    l1: float
    dssim: float
    freq: float
    d_la: float
    d_lp: float
    d_ha: float
    d_hp: float
    high_active: bool
    psnr: float
    ssim: float
    splats: int
    clones: int = 0
    splits: int = 0
    prunes: int = 0
    region_grad: dict | None = None


RECORD_COLUMNS = ("iteration", "loss", "l1", "dssim", "freq", "d_la", "d_lp", "d_ha", "d_hp",
                  "high_active", "psnr", "ssim", "splats", "clones", "splits", "prunes")


@dataclass
class LossResult:
    loss: float
    grad: np.ndarray
    l1: float
    dssim: float
    ssim: float
    freq: float
    parts: spectral.FreqParts


def freq_active(t: int, config: TrainConfig) -> bool:
    return config.freq_mode != "none" and 0 < t <= config.densify_end


def total_loss(rendered, truth, t: int, config: TrainConfig,
               truth_spectrum: spectral.SpectralTarget | None = None) -> LossResult:
    """``(1 - lam) L1 + lam (1 - SSIM) + L_f(t)`` and its gradient wrt ``rendered``.

    ``truth_spectrum`` optionally supplies the cached spectrum of ``truth``.
    """
    rendered = np.asarray(rendered, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if rendered.shape != truth.shape:
        raise ShapeError(f"shape mismatch: {rendered.shape} vs {truth.shape}")
    lam = config.lambda_dssim
    l1_value, l1_grad = metrics.l1(rendered, truth)
    ssim_value, ssim_grad = metrics.ssim_with_grad(rendered, truth)
    loss = (1.0 - lam) * l1_value + lam * (1.0 - ssim_value)
    grad = (1.0 - lam) * l1_grad - lam * ssim_grad
    freq = 0.0
    parts = spectral.FreqParts(0.0, 0.0, 0.0, 0.0, False)
    if freq_active(t, config):
        freq, parts, f_grad = spectral.freq_loss_and_grad(
            rendered, truth if truth_spectrum is None else truth_spectrum, t,
            config.schedule(rendered.shape))
        loss += freq
        grad = grad + f_grad
    return LossResult(loss, grad, l1_value, (1.0 - ssim_value) / 2.0, ssim_value, freq, parts)


def downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Block-average by ``factor``; trailing rows/columns that do not fill a block are dropped."""
    if factor == 1:
        return image.copy()
    h, w, c = image.shape
    hs, ws = h // factor, w // factor
    if hs < 1 or ws < 1:
        raise ParameterError(f"image {h}x{w} too small to downsample by {factor}")
    crop = image[:hs * factor, :ws * factor]
    return crop.reshape(hs, factor, ws, factor, c).mean(axis=(1, 3))


def rescale_field(field: SplatField, factor: float, canvas) -> SplatField:
    """Resolution change: positions and scales multiply by ``factor``."""
    out = field.with_canvas(canvas)
    out.pos = out.pos * factor
    out.log_scale = out.log_scale + math.log(factor)
    return out


class Adam:
    """Per-parameter-group Adam with bias correction and a shared step counter."""

    def __init__(self, field: SplatField, betas=(0.9, 0.999), eps=1e-15):
        self.b1, self.b2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in field.params().items()}
        self.v = {k: np.zeros_like(v) for k, v in field.params().items()}

    def step(self, field: SplatField, grads: dict, lrs: dict):
        self.step_count += 1
        c1 = 1.0 - self.b1**self.step_count
        c2 = 1.0 - self.b2**self.step_count
        for name in PARAM_GROUPS:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = lrs[name] * (m / c1) / (np.sqrt(v / c2) + self.eps)
            setattr(field, name, getattr(field, name) - update)

    def remap(self, kept: np.ndarray, n_new: int):
        """Keep moments of surviving splats (in order) and zero-init ``n_new`` new ones."""
        for state in (self.m, self.v):
            for name, arr in state.items():
                fresh = np.zeros((n_new,) + arr.shape[1:])
                state[name] = np.concatenate([arr[kept], fresh])


@dataclass
class TrainArtifacts:
    snapshots: list = dc_field(default_factory=list)  # (iteration, image)
    final_image: np.ndarray | None = None


class Trainer:
    """Resumable training state; :func:`train` runs it to completion."""

    def __init__(self, target: np.ndarray, config: TrainConfig, field: SplatField | None = None,
                 snapshot_every: int = 0):
        config.validate()
        target = np.asarray(target, dtype=np.float64)
        if target.ndim == 2:
            target = target[:, :, None]
        self.target = target
        self.config = config
        self.snapshot_every = snapshot_every
        self.iteration = 0
        self.records: list[IterationRecord] = []
        self.artifacts = TrainArtifacts()
        if field is None:
            field = init_field(target, config.init_count, config.seed)
        self.full_canvas = target.shape
        self.scale = 1
        if config.total_iters > 0 and config.warmup_iters > 0 and config.warmup_scale > 1:
            self.scale = config.warmup_scale
        self.current_target = downsample(target, self.scale)
        self._spectrum = None
        if self.scale > 1:
            field = rescale_field(field, 1.0 / self.scale, self.current_target.shape)
        self.field = field
        self.adam = Adam(field)
        self.stats = dens.DensifyStats.zeros(len(field))

    @property
    def done(self) -> bool:
        return self.iteration >= self.config.total_iters

    def _lrs(self, t: int) -> dict:
        cfg = self.config
        h, w = self.current_target.shape[:2]
        frac = t / max(cfg.total_iters, 1)
        pos_lr = cfg.lr_pos * math.hypot(h, w) * cfg.lr_pos_final_frac**frac
        return {"pos": pos_lr, "log_scale": cfg.lr_log_scale, "rotation": cfg.lr_rotation,
                "opacity_logit": cfg.lr_opacity_logit, "color": cfg.lr_color,
                "depth": cfg.lr_depth}

    def _leave_warmup(self):
        self.field = rescale_field(self.field, float(self.scale), self.full_canvas)
        self.current_target = self.target
        self._spectrum = None
        self.scale = 1
        self.stats = dens.DensifyStats.zeros(len(self.field))

    def step(self) -> IterationRecord:
        cfg = self.config
        t = self.iteration + 1
        if self.scale > 1 and t > cfg.warmup_iters:
            self._leave_warmup()
        dims = self.current_target.shape[:2]
        image = render(self.field, dims).image
        if self._spectrum is None and freq_active(t, cfg):
            self._spectrum = spectral.SpectralTarget(self.current_target)
        res = total_loss(image, self.current_target, t, cfg, self._spectrum)
        if not (np.isfinite(res.loss) and np.isfinite(res.grad).all()):
            raise TrainingDiverged(f"non-finite loss at iteration {t}",
                                   snapshot={"iteration": t, "field": self.field.copy(),
                                             "image": image})
        grads = render_backward(self.field, dims, res.grad)
        densifying = self.scale == 1 and cfg.warmup_iters < t <= cfg.densify_end
        if densifying:
            # the threshold is in normalized-device units, where the canvas spans [-1, 1]
            g_ndc = grads.pos * (0.5 * dims[1], 0.5 * dims[0])
            self.stats = dens.accumulate(self.stats, np.hypot(g_ndc[:, 0], g_ndc[:, 1]),
                                         grads.touched, grads.pos)
        self.adam.step(self.field, grads.as_dict(), self._lrs(t))

        report = dens.DensifyReport()
        if densifying and t % cfg.densify_interval == 0:
            report = self._densify(t)

        self.iteration = t
        rec = IterationRecord(
            iteration=t, loss=res.loss, l1=res.l1, dssim=res.dssim, freq=res.freq,
            d_la=res.parts.d_la, d_lp=res.parts.d_lp, d_ha=res.parts.d_ha, d_hp=res.parts.d_hp,
            high_active=res.parts.high_active, psnr=metrics.psnr(image, self.current_target),
            ssim=res.ssim, splats=len(self.field), clones=report.clones, splits=report.splits,
            prunes=report.prunes)
        self.records.append(rec)
        if self.snapshot_every and t % self.snapshot_every == 0:
            self.artifacts.snapshots.append((t, render(self.field, dims).image))
        return rec

    def _densify(self, t: int) -> dens.DensifyReport:
        cfg = self.config
        h, w = self.current_target.shape[:2]
        rng = np.random.default_rng([cfg.seed, t])
        field, stats, rep = dens.densify_step(
            self.field, self.stats, cfg.effective_tau, cfg.split_frac * math.hypot(h, w), rng)
        self.adam.remap(rep.kept, len(field) - len(rep.kept))

        keep = dens.prune_mask(field, cfg.eps_opacity)
        n_pruned = int((~keep).sum())
        if n_pruned:
            field = field.select(keep)
            stats = stats.select(keep)
            self.adam.remap(np.flatnonzero(keep), 0)
        self.field, self.stats = field, stats
        return dataclasses.replace(rep, prunes=n_pruned)

    def run_until(self, t_stop: int):
        while self.iteration < min(t_stop, self.config.total_iters):
            self.step()
        return self

    def finish(self):
        self.run_until(self.config.total_iters)
        if self.scale > 1:
            # only reachable when total_iters <= warmup_iters
            self._leave_warmup()
        if self.config.total_iters > 0:
            self.artifacts.final_image = render(self.field).image
        return self.field, self.records, self.artifacts


def train(target, config: TrainConfig, field: SplatField | None = None, snapshot_every: int = 0):
    """Fit ``target``; returns ``(field, records, artifacts)``."""
    return Trainer(target, config, field, snapshot_every).finish()


def region_gradient_diagnostic(field: SplatField, target, masks: dict, t: int,
                               config: TrainConfig) -> dict:
    """Mean ``|dL/dpixel|`` of the configured loss inside each boolean (H, W) mask."""
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == 2:
        target = target[:, :, None]
    image = render(field, target.shape[:2]).image
    grad = np.abs(total_loss(image, target, t, config).grad)
    out = {}
    for name, mask in masks.items():
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != target.shape[:2]:
            raise ShapeError(f"mask {name!r} has shape {mask.shape}, expected {target.shape[:2]}")
        if not mask.any():
            raise ParameterError(f"mask {name!r} is empty")
        out[name] = float(grad[mask].mean())
    return out
