"""Ablation over loss variants at matched splat counts, and the region-gradient check.

The ablation trains the same target three ways: pixel losses only, plus an
un-annealed full-band frequency loss, and plus the progressive (annealed)
frequency loss.  Frequency losses raise positional gradients and therefore the
number of densified splats, so each regularized variant gets its own gradient
threshold, searched until its final splat count lies within ``count_tol`` of
the pixel-only run.  Densification ends at ``densify_end``, so candidate
thresholds are compared there and only the accepted run is trained further.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import metrics
from .errors import ParameterError
from .field import SplatField, init_field, logit
from .trainer import Trainer, TrainConfig, region_gradient_diagnostic

log = logging.getLogger(__name__)

VARIANTS = (("Base", "none"), ("Base+FR", "full"), ("Base+FR+FA", "progressive"))
ABLATION_COLUMNS = ("variant", "psnr", "ssim", "l1", "splats")


@dataclass(frozen=True)
class AblationRow:
    variant: str
    psnr: float
    ssim: float
    l1: float
    splats: int
    tau_pos: float
    count_ratio: float  # splats / reference splats


@dataclass(frozen=True)
class CalibrationStep:
    variant: str
    tau_pos: float
    splats: int


def _first_densify_iter(cfg: TrainConfig) -> int:
    k = cfg.warmup_iters // cfg.densify_interval + 1
    return k * cfg.densify_interval


def _row(name, trainer: Trainer, tau, ref_count) -> AblationRow:
    field, _, art = trainer.finish()
    image, target = art.final_image, trainer.target
    rep = metrics.report(image, target)
    return AblationRow(name, rep.psnr, rep.ssim, rep.l1, len(field), tau,
                       len(field) / ref_count if ref_count else 1.0)


class _ThresholdSearch:
    """Root search for log(count) = log(target) over log(tau).

    Splat counts fall as the threshold rises.  Inside a bracket this is a
    safeguarded secant step; outside it extrapolates with a slope clamped to
    [-3, -0.3] (-1 with a single point).
    """

    def __init__(self, target_count: int):
        self.goal = math.log(target_count)
        self.points: list[tuple[float, float]] = []  # (log tau, log count)

    def add(self, tau, count):
        self.points.append((math.log(tau), math.log(max(count, 1))))

    def next_tau(self) -> float:
        above = [p for p in self.points if p[1] > self.goal]  # too many splats
        below = [p for p in self.points if p[1] < self.goal]
        if above and below:
            (xa, ya), (xb, yb) = max(above), min(below)
            x = xa + (self.goal - ya) * (xb - xa) / (yb - ya)
            margin = 0.1 * (xb - xa)
            return math.exp(min(max(x, xa + margin), xb - margin))
        near = sorted(self.points, key=lambda p: abs(p[1] - self.goal))[:2]
        slope = -1.0
        if len(near) == 2 and near[0][0] != near[1][0]:
            slope = (near[1][1] - near[0][1]) / (near[1][0] - near[0][0])
            slope = min(max(slope, -3.0), -0.3)
        x0, y0 = near[0]
        return math.exp(x0 + (self.goal - y0) / slope)


def run_ablation(target, config: TrainConfig, count_tol: float = 0.05, max_tries: int = 6,
                 field: SplatField | None = None):
    """Train Base, Base+FR and Base+FR+FA; returns ``(rows, calibration_steps)``.

    Each regularized variant first tries ``tau_pos * tau_mult``.  When no tried
    threshold lands within tolerance, the closest one is kept and its
    ``count_ratio`` shows the mismatch.
    """
    if count_tol <= 0 or max_tries < 1:
        raise ParameterError("count_tol must be positive and max_tries >= 1")
    target = np.asarray(target, dtype=np.float64)
    if field is None:
        field = init_field(target, config.init_count, config.seed)
    steps: list[CalibrationStep] = []
    rows: list[AblationRow] = []

    base_cfg = config.replace(freq_mode="none", tau_mult=1.0)
    base = Trainer(target, base_cfg, field.copy())
    base.run_until(config.densify_end)
    ref_count = len(base.field)
    steps.append(CalibrationStep("Base", base_cfg.tau_pos, ref_count))
    rows.append(_row("Base", base, base_cfg.tau_pos, ref_count))

    fork_at = _first_densify_iter(config) - 1
    for name, mode in VARIANTS[1:]:
        cfg = config.replace(freq_mode=mode, tau_mult=1.0)
        # threshold-independent prefix, trained once and forked per candidate
        prefix = Trainer(target, cfg, field.copy())
        prefix.run_until(fork_at)
        search = _ThresholdSearch(ref_count)
        tau = config.tau_pos * config.tau_mult
        best = None
        for _ in range(max_tries):
            trial = copy.deepcopy(prefix)
            trial.config = cfg.replace(tau_pos=tau)
            trial.run_until(config.densify_end)
            count = len(trial.field)
            steps.append(CalibrationStep(name, tau, count))
            log.info("%s: tau_pos=%.4g gives %d splats (reference %d)", name, tau, count, ref_count)
            err = abs(count / ref_count - 1.0)
            if best is None or err < best[0]:
                best = (err, tau, trial)
            if err <= count_tol:
                break
            search.add(tau, count)
            tau = search.next_tau()
        _, tau, trial = best
        rows.append(_row(name, trial, tau, ref_count))
    return rows, steps


def median_rows(per_seed: list[list[AblationRow]]) -> list[AblationRow]:
    """Per-variant medians over seeds (splat count rounded to an integer)."""
    out = []
    for i, (name, _) in enumerate(VARIANTS):
        rs = [rows[i] for rows in per_seed]
        out.append(AblationRow(
            name,
            float(np.median([r.psnr for r in rs])),
            float(np.median([r.ssim for r in rs])),
            float(np.median([r.l1 for r in rs])),
            int(round(float(np.median([r.splats for r in rs])))),
            float(np.median([r.tau_pos for r in rs])),
            float(np.median([r.count_ratio for r in rs])),
        ))
    return out


# ---------------------------------------------------------------- region gradients

def under_split_field(target, region_mask, background_count: int = 64, seed: int = 0):
    """Coarse background splats plus one large opaque splat over the masked region."""
    target = np.asarray(target, dtype=np.float64)
    rows, cols = np.nonzero(region_mask)
    if rows.size == 0:
        raise ParameterError("region mask is empty")
    field = init_field(target, background_count, seed)
    center = np.array([cols.mean() + 0.5, rows.mean() + 0.5])
    half = np.array([cols.max() - cols.min() + 1, rows.max() - rows.min() + 1]) / 2.0
    big = SplatField(
        canvas=field.canvas,
        pos=center[None, :],
        log_scale=np.log(half)[None, :],
        rotation=np.zeros(1),
        opacity_logit=np.full(1, float(logit(0.9))),
        color=target[region_mask].mean(axis=0)[None, :],
        depth=np.full(1, -1.0),  # composited in front of the background
    )
    return field.concat(big)


@dataclass(frozen=True)
class GradientResponse:
    seed: int
    pixel_only: float
    with_freq: float

    @property
    def ratio(self) -> float:
        return self.with_freq / self.pixel_only if self.pixel_only > 0 else math.inf


def gradient_response(target, masks, config: TrainConfig, iters: int, seed: int = 0,
                      background_count: int = 64) -> GradientResponse:
    """Mean |dL/dpixel| in ``masks["high"]`` after ``iters`` steps, without and with L_f.

    Both runs start from the same under-split field, never densify, and use
    L1 as the only pixel loss; the diagnostic is taken at the same iteration
    under each run's own loss.
    """
    if iters < 1:
        raise ParameterError("iters must be >= 1")
    field = under_split_field(target, masks["high"], background_count, seed)
    total = 2 * iters + 2
    base = config.replace(total_iters=total, densify_end=total - 1, warmup_iters=0,
                          densify_interval=total, lambda_dssim=0.0, seed=seed,
                          anneal_t0=max(1, iters // 5), anneal_t_end=max(2, iters))
    values = []
    for mode in ("none", "progressive"):
        cfg = base.replace(freq_mode=mode)
        trainer = Trainer(target, cfg, field.copy())
        trainer.run_until(iters)
        diag = region_gradient_diagnostic(trainer.field, target, {"high": masks["high"]},
                                          iters, cfg)
        values.append(diag["high"])
    return GradientResponse(seed, values[0], values[1])
