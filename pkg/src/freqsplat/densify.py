"""Adaptive density control: gradient statistics, clone, split, prune."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ParameterError, ShapeError
from .field import SplatField, rotation_matrix

SPLIT_FACTOR = 1.6
CLONE_OFFSET = 0.5


@dataclass
class DensifyStats:
    """Per-splat accumulated positional-gradient norms and observation counts.

    ``grad_vec_accum`` keeps the summed gradient vector so clones can be
    offset along the direction the loss pushes the splat.
    """

    grad_norm_accum: np.ndarray
    obs_count: np.ndarray
    grad_vec_accum: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(np.zeros(n), np.zeros(n, dtype=np.int64), np.zeros((n, 2)))

    def __len__(self):
        return len(self.grad_norm_accum)

    def average(self) -> np.ndarray:
        return self.grad_norm_accum / np.maximum(self.obs_count, 1)

    def select(self, index) -> "DensifyStats":
        return DensifyStats(self.grad_norm_accum[index].copy(), self.obs_count[index].copy(),
                            self.grad_vec_accum[index].copy())

    def copy(self) -> "DensifyStats":
        return self.select(slice(None))


def accumulate(stats: DensifyStats, grad_norms, touched=None, grad_vecs=None) -> DensifyStats:
    grad_norms = np.asarray(grad_norms, dtype=np.float64)
    n = len(stats)
    if grad_norms.shape != (n,):
        raise ShapeError(f"expected {n} gradient norms, got shape {grad_norms.shape}")
    if touched is None:
        touched = np.ones(n, dtype=bool)
    touched = np.asarray(touched, dtype=bool)
    out = stats.copy()
    out.grad_norm_accum[touched] += grad_norms[touched]
    out.obs_count[touched] += 1
    if grad_vecs is not None:
        grad_vecs = np.asarray(grad_vecs, dtype=np.float64).reshape(n, 2)
        out.grad_vec_accum[touched] += grad_vecs[touched]
    return out


@dataclass(frozen=True)
class DensifyReport:
    clones: int = 0
    splits: int = 0
    prunes: int = 0
    # indices (into the input field) of splats carried over, in output order;
    # every output row past len(kept) is new
    kept: np.ndarray | None = dc_field(default=None, compare=False, repr=False)


def densify_step(field: SplatField, stats: DensifyStats, tau_pos: float,
                 split_threshold: float, rng: np.random.Generator):
    """Clone small and split large splats whose average gradient reaches ``tau_pos``.

    Output order: untouched and cloned-original splats in their original order,
    then clone copies, then split children (two per parent).
    """
    if len(stats) != len(field):
        raise ShapeError(f"stats track {len(stats)} splats, field has {len(field)}")
    if tau_pos < 0 or split_threshold <= 0:
        raise ParameterError("tau_pos must be >= 0 and split_threshold > 0")
    hot = stats.average() >= tau_pos
    hot &= stats.obs_count > 0
    if not hot.any():
        return field.copy(), stats.copy(), DensifyReport(kept=np.arange(len(field)))

    sigma_max = field.scale.max(axis=1)
    clone = hot & (sigma_max < split_threshold)
    split = hot & ~clone

    copies = field.select(clone)
    direction = -stats.grad_vec_accum[clone]
    length = np.hypot(direction[:, 0], direction[:, 1])
    unit = np.where(length[:, None] > 0, direction / np.where(length > 0, length, 1.0)[:, None], 0.0)
    copies.pos = copies.pos + unit * (CLONE_OFFSET * sigma_max[clone])[:, None]

    parents = field.select(split)
    children = parents.concat(parents)
    n_split = len(parents)
    if n_split:
        # child k of parent j sits at row j + k * n_split; sample both per parent in order
        z = rng.standard_normal((n_split, 2, 2))
        offsets = np.empty((2 * n_split, 2))
        for j in range(n_split):
            rot = rotation_matrix(parents.rotation[j])
            sig = parents.scale[j]
            for k in range(2):
                offsets[j + k * n_split] = rot @ (sig * z[j, k])
        children.pos = children.pos + offsets
        children.log_scale = children.log_scale - math.log(SPLIT_FACTOR)

    kept = field.select(~split)
    new_field = kept.concat(copies).concat(children)

    kept_stats = stats.select(~split)
    kept_stats.grad_norm_accum[clone[~split]] = 0.0
    kept_stats.obs_count[clone[~split]] = 0
    kept_stats.grad_vec_accum[clone[~split]] = 0.0
    fresh = DensifyStats.zeros(len(copies) + len(children))
    new_stats = DensifyStats(
        np.concatenate([kept_stats.grad_norm_accum, fresh.grad_norm_accum]),
        np.concatenate([kept_stats.obs_count, fresh.obs_count]),
        np.concatenate([kept_stats.grad_vec_accum, fresh.grad_vec_accum]),
    )
    report = DensifyReport(clones=int(clone.sum()), splits=n_split, kept=np.flatnonzero(~split))
    return new_field, new_stats, report


def prune_mask(field: SplatField, eps_opacity: float) -> np.ndarray:
    """Boolean keep-mask; never empties the field."""
    opacity = field.opacity
    keep = opacity >= eps_opacity
    if not keep.any():
        keep[int(np.argmax(opacity))] = True
    return keep


def prune(field: SplatField, eps_opacity: float) -> SplatField:
    return field.select(prune_mask(field, eps_opacity))
