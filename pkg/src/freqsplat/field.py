"""Anisotropic 2D Gaussian parameterization and field initialization.

A field stores raw (pre-activation) parameters as a structure of arrays so the
rasterizer and optimizer can work on whole parameter groups at once.  Single
splats are exposed through :class:`GaussianSplat` for inspection and tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import expit, logit as _logit

from .errors import ParameterError

# Parameter groups in declaration order; checkpoint layout and optimizer
# state follow this order.
PARAM_GROUPS = ("pos", "log_scale", "rotation", "opacity_logit", "color", "depth")


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


def logit(p):
    return _logit(np.asarray(p, dtype=np.float64))


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class GaussianSplat:
    """One splat with raw parameters (pixel units, x right / y down)."""

    pos: tuple[float, float]
    log_scale: tuple[float, float]
    rotation: float
    opacity_logit: float
    color: tuple[float, ...]
    depth: float = 0.0


@dataclass(frozen=True)
class ActivatedSplat:
    pos: np.ndarray
    cov: np.ndarray
    cov_inverse: np.ndarray
    opacity: float
    color: np.ndarray
    depth: float


def activate(splat: GaussianSplat, index: int = 0) -> ActivatedSplat:
    """Map raw parameters to position, covariance (and inverse), opacity, color.

    ``cov = R diag(exp(2 * log_scale)) R^T``.  Color is returned raw; clamping
    to [0, 1] happens only when compositing.
    """
    values = [*splat.pos, *splat.log_scale, splat.rotation, splat.opacity_logit,
              *splat.color, splat.depth]
    if not all(math.isfinite(v) for v in values):
        raise ParameterError(f"splat {index} has non-finite parameters")
    rot = rotation_matrix(splat.rotation)
    var = np.exp(2.0 * np.asarray(splat.log_scale, dtype=np.float64))
    cov = rot @ np.diag(var) @ rot.T
    cov_inv = rot @ np.diag(1.0 / var) @ rot.T
    # exact symmetry; the products above can differ in the last ulp
    cov = 0.5 * (cov + cov.T)
    cov_inv = 0.5 * (cov_inv + cov_inv.T)
    return ActivatedSplat(
        pos=np.asarray(splat.pos, dtype=np.float64),
        cov=cov,
        cov_inverse=cov_inv,
        opacity=float(sigmoid(splat.opacity_logit)),
        color=np.asarray(splat.color, dtype=np.float64),
        depth=float(splat.depth),
    )


@dataclass
class SplatField:
    """An ordered set of splats on an ``(H, W, C)`` canvas.

    Arrays: ``pos`` (N, 2), ``log_scale`` (N, 2), ``rotation`` (N,),
    ``opacity_logit`` (N,), ``color`` (N, C), ``depth`` (N,).
    """

    canvas: tuple[int, int, int]
    pos: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: np.ndarray
    color: np.ndarray
    depth: np.ndarray = dc_field(default=None)

    def __post_init__(self):
        n = len(self.pos)
        if self.depth is None:
            self.depth = np.zeros(n)
        self.pos = np.asarray(self.pos, dtype=np.float64).reshape(n, 2)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(n, 2)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(n)
        self.opacity_logit = np.asarray(self.opacity_logit, dtype=np.float64).reshape(n)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(n, self.canvas[2])
        self.depth = np.asarray(self.depth, dtype=np.float64).reshape(n)
        self.canvas = tuple(int(v) for v in self.canvas)

    def __len__(self):
        return len(self.pos)

    def __getitem__(self, i: int) -> GaussianSplat:
        return GaussianSplat(
            pos=tuple(self.pos[i]),
            log_scale=tuple(self.log_scale[i]),
            rotation=float(self.rotation[i]),
            opacity_logit=float(self.opacity_logit[i]),
            color=tuple(self.color[i]),
            depth=float(self.depth[i]),
        )

    @classmethod
    def from_splats(cls, splats, canvas) -> "SplatField":
        splats = list(splats)
        return cls(
            canvas=canvas,
            pos=[s.pos for s in splats],
            log_scale=[s.log_scale for s in splats],
            rotation=[s.rotation for s in splats],
            opacity_logit=[s.opacity_logit for s in splats],
            color=[s.color for s in splats],
            depth=[s.depth for s in splats],
        )

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logit)

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_GROUPS}

    def copy(self) -> "SplatField":
        return SplatField(self.canvas, **{k: v.copy() for k, v in self.params().items()})

    def select(self, index) -> "SplatField":
        return SplatField(self.canvas, **{k: v[index].copy() for k, v in self.params().items()})

    def concat(self, other: "SplatField") -> "SplatField":
        return SplatField(self.canvas, **{
            k: np.concatenate([v, getattr(other, k)]) for k, v in self.params().items()
        })

    def with_canvas(self, canvas) -> "SplatField":
        out = self.copy()
        out.canvas = tuple(int(v) for v in canvas)
        return out

    def validate(self):
        """Raise :class:`ParameterError` naming the first non-finite splat."""
        for name, arr in self.params().items():
            bad = ~np.isfinite(arr.reshape(len(self), -1)).all(axis=1)
            if bad.any():
                raise ParameterError(
                    f"splat {int(np.argmax(bad))} has non-finite {name}")

    def to_flat(self) -> np.ndarray:
        """Per-splat parameter rows in declaration order, shape (N, 7 + C)."""
        return np.concatenate([
            self.pos, self.log_scale, self.rotation[:, None],
            self.opacity_logit[:, None], self.color, self.depth[:, None],
        ], axis=1)

    @classmethod
    def from_flat(cls, rows: np.ndarray, canvas) -> "SplatField":
        c = canvas[2]
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, 7 + c)
        return cls(
            canvas=canvas,
            pos=rows[:, 0:2], log_scale=rows[:, 2:4], rotation=rows[:, 4],
            opacity_logit=rows[:, 5], color=rows[:, 6:6 + c], depth=rows[:, 6 + c],
        )


def init_sigma(height: int, width: int, count: int) -> float:
    """Per-splat standard deviation so the 1-sigma discs roughly tile the canvas."""
    return math.sqrt(height * width / count / math.pi)


def init_field(target: np.ndarray, count: int, seed: int) -> SplatField:
    """Stratified-jittered initialization with colors sampled from ``target``."""
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == 2:
        target = target[:, :, None]
    h, w, c = target.shape
    rng = np.random.default_rng(seed)

    nx = max(1, math.ceil(math.sqrt(count * w / h)))
    ny = max(1, math.ceil(count / nx))
    cells = np.round(np.linspace(0, nx * ny - 1, count)).astype(np.int64)
    cy, cx = np.divmod(cells, nx)
    jitter = rng.uniform(0.0, 1.0, size=(count, 2))
    pos = np.stack([(cx + jitter[:, 0]) * (w / nx), (cy + jitter[:, 1]) * (h / ny)], axis=1)

    col = np.clip(pos[:, 0].astype(np.int64), 0, w - 1)
    row = np.clip(pos[:, 1].astype(np.int64), 0, h - 1)
    color = target[row, col, :]

    sigma = init_sigma(h, w, count)
    return SplatField(
        canvas=(h, w, c),
        pos=pos,
        log_scale=np.full((count, 2), math.log(sigma)),
        rotation=rng.uniform(0.0, math.pi, size=count),
        opacity_logit=np.full(count, float(logit(0.1))),
        color=color,
        depth=rng.uniform(0.0, 1.0, size=count),
    )
