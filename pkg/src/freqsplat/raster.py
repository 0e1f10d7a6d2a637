"""Tile-based alpha-blend rasterizer with an analytic backward pass.

Pixel ``(row, col)`` has its center at ``(col + 0.5, row + 0.5)`` in the same
pixel units as splat positions.  Splats are composited front to back in
ascending depth order (ties broken by index) onto a black background::

    C = sum_i c_i a_i prod_{j<i} (1 - a_j),   a_i = o_i exp(-0.5 d^T Sigma_i^-1 d)

A contribution is skipped when ``a_i < 1/255`` or the pixel center lies outside
the splat's axis-aligned 3-sigma box.  Tiles are 16x16 and independent, so
both passes run in parallel over tiles.  The backward pass writes per-(tile,
splat) partial gradients and reduces them in tile order, which keeps results
bit-identical for any thread count.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

from .errors import ParameterError, ShapeError
from .field import SplatField, sigmoid

TILE = 16
ALPHA_MIN = 1.0 / 255.0
BOX_SIGMAS = 3.0

if "NUMBA_THREADING_LAYER" not in os.environ:
    # the portable pool; results never depend on the layer
    numba.config.THREADING_LAYER = "workqueue"


def set_threads(n: int | None) -> int:
    """Size the worker pool used by the tile kernels; returns the count in use."""
    if n is not None:
        n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
        numba.set_num_threads(n)
    return numba.get_num_threads()


@dataclass
class RenderOutput:
    image: np.ndarray
    # (pixel_offsets, splat_index, weight, transmittance); pixel p owns the
    # slice pixel_offsets[p]:pixel_offsets[p+1], in blend order.
    per_pixel_contributors: tuple | None = None


@dataclass
class SplatGrads:
    pos: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: np.ndarray
    color: np.ndarray
    depth: np.ndarray
    pos_grad_norm: np.ndarray
    touched: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "pos": self.pos, "log_scale": self.log_scale, "rotation": self.rotation,
            "opacity_logit": self.opacity_logit, "color": self.color, "depth": self.depth,
        }


class _Prepared:
    """Activated, depth-sorted, tile-binned splat arrays."""

    def __init__(self, field: SplatField, viewport):
        if len(field) == 0:
            raise ParameterError("cannot render an empty field")
        h, w = (int(v) for v in viewport)
        if h <= 0 or w <= 0:
            raise ParameterError(f"viewport must be positive, got {viewport}")
        field.validate()
        self.h, self.w, self.c = h, w, field.canvas[2]
        n = len(field)
        self.order = np.lexsort((np.arange(n), field.depth))
        self.px = np.ascontiguousarray(field.pos[:, 0])
        self.py = np.ascontiguousarray(field.pos[:, 1])
        self.cs = np.cos(field.rotation)
        self.sn = np.sin(field.rotation)
        var = np.exp(2.0 * field.log_scale)
        self.q1 = 1.0 / var[:, 0]
        self.q2 = 1.0 / var[:, 1]
        cov_xx = self.cs**2 * var[:, 0] + self.sn**2 * var[:, 1]
        cov_yy = self.sn**2 * var[:, 0] + self.cs**2 * var[:, 1]
        self.rx = BOX_SIGMAS * np.sqrt(cov_xx)
        self.ry = BOX_SIGMAS * np.sqrt(cov_yy)
        self.opacity = sigmoid(field.opacity_logit)
        self.color = np.ascontiguousarray(np.clip(field.color, 0.0, 1.0))
        self.color_live = ((field.color >= 0.0) & (field.color <= 1.0)).astype(np.float64)
        self.n_tx = (w + TILE - 1) // TILE
        self.n_ty = (h + TILE - 1) // TILE
        self.offsets, self.entries = _bin_splats(
            self.order, self.px, self.py, self.rx, self.ry, h, w, TILE, self.n_tx, self.n_ty)

    def kernel_args(self):
        return (self.h, self.w, self.c, TILE, self.n_tx, self.offsets, self.entries,
                self.px, self.py, self.cs, self.sn, self.q1, self.q2,
                self.opacity, self.color, self.rx, self.ry)


@njit(cache=True)
def _pixel_span(center, radius, limit):
    # pixel indices k with |k + 0.5 - center| <= radius, clipped to [0, limit)
    lo = math.ceil(center - radius - 0.5)
    hi = math.floor(center + radius - 0.5)
    if lo < 0:
        lo = 0
    if hi > limit - 1:
        hi = limit - 1
    return lo, hi


@njit(cache=True)
def _bin_splats(order, px, py, rx, ry, h, w, tile, n_tx, n_ty):
    n_tiles = n_tx * n_ty
    counts = np.zeros(n_tiles + 1, dtype=np.int64)
    for k in range(order.shape[0]):
        i = order[k]
        c0, c1 = _pixel_span(px[i], rx[i], w)
        r0, r1 = _pixel_span(py[i], ry[i], h)
        if c0 > c1 or r0 > r1:
            continue
        for ty in range(r0 // tile, r1 // tile + 1):
            for tx in range(c0 // tile, c1 // tile + 1):
                counts[ty * n_tx + tx + 1] += 1
    offsets = np.cumsum(counts)
    entries = np.empty(offsets[-1], dtype=np.int64)
    fill = offsets[:-1].copy()
    for k in range(order.shape[0]):
        i = order[k]
        c0, c1 = _pixel_span(px[i], rx[i], w)
        r0, r1 = _pixel_span(py[i], ry[i], h)
        if c0 > c1 or r0 > r1:
            continue
        for ty in range(r0 // tile, r1 // tile + 1):
            for tx in range(c0 // tile, c1 // tile + 1):
                t = ty * n_tx + tx
                entries[fill[t]] = i
                fill[t] += 1
    return offsets, entries


@njit(parallel=True, cache=True)
def _forward_kernel(h, w, c, tile, n_tx, offsets, entries, px, py, cs, sn, q1, q2,
                    opacity, color, rx, ry):
    out = np.zeros((h, w, c))
    n_tiles = offsets.shape[0] - 1
    for t in prange(n_tiles):
        y0 = (t // n_tx) * tile
        x0 = (t % n_tx) * tile
        for r in range(y0, min(y0 + tile, h)):
            for col in range(x0, min(x0 + tile, w)):
                trans = 1.0
                for e in range(offsets[t], offsets[t + 1]):
                    i = entries[e]
                    dx = col + 0.5 - px[i]
                    dy = r + 0.5 - py[i]
                    if abs(dx) > rx[i] or abs(dy) > ry[i]:
                        continue
                    u1 = cs[i] * dx + sn[i] * dy
                    u2 = -sn[i] * dx + cs[i] * dy
                    a = opacity[i] * math.exp(-0.5 * (u1 * u1 * q1[i] + u2 * u2 * q2[i]))
                    if a < ALPHA_MIN:
                        continue
                    for ch in range(c):
                        out[r, col, ch] += color[i, ch] * a * trans
                    trans *= 1.0 - a
    return out


@njit(parallel=True, cache=True)
def _backward_kernel(h, w, c, tile, n_tx, offsets, entries, px, py, cs, sn, q1, q2,
                     opacity, color, rx, ry, color_live, grad_img):
    n_entries = entries.shape[0]
    # columns: pos x, pos y, log_scale 1, log_scale 2, rotation, opacity_logit, color...
    part = np.zeros((n_entries, 6 + c))
    touched = np.zeros(n_entries, dtype=np.bool_)
    n_tiles = offsets.shape[0] - 1
    for t in prange(n_tiles):
        start = offsets[t]
        m = offsets[t + 1] - start
        if m == 0:
            continue
        buf_e = np.empty(m, dtype=np.int64)
        buf_a = np.empty(m)
        buf_t = np.empty(m)
        buf_u1 = np.empty(m)
        buf_u2 = np.empty(m)
        behind = np.empty(c)
        y0 = (t // n_tx) * tile
        x0 = (t % n_tx) * tile
        for r in range(y0, min(y0 + tile, h)):
            for col in range(x0, min(x0 + tile, w)):
                n = 0
                trans = 1.0
                for e in range(start, start + m):
                    i = entries[e]
                    dx = col + 0.5 - px[i]
                    dy = r + 0.5 - py[i]
                    if abs(dx) > rx[i] or abs(dy) > ry[i]:
                        continue
                    u1 = cs[i] * dx + sn[i] * dy
                    u2 = -sn[i] * dx + cs[i] * dy
                    a = opacity[i] * math.exp(-0.5 * (u1 * u1 * q1[i] + u2 * u2 * q2[i]))
                    if a < ALPHA_MIN:
                        continue
                    buf_e[n] = e
                    buf_a[n] = a
                    buf_t[n] = trans
                    buf_u1[n] = u1
                    buf_u2[n] = u2
                    n += 1
                    trans *= 1.0 - a
                for ch in range(c):
                    behind[ch] = 0.0
                for k in range(n - 1, -1, -1):
                    e = buf_e[k]
                    i = entries[e]
                    a = buf_a[k]
                    tr = buf_t[k]
                    touched[e] = True
                    d_alpha = 0.0
                    for ch in range(c):
                        g = grad_img[r, col, ch]
                        d_alpha += g * tr * (color[i, ch] - behind[ch])
                        part[e, 6 + ch] += g * a * tr * color_live[i, ch]
                        behind[ch] = color[i, ch] * a + (1.0 - a) * behind[ch]
                    part[e, 5] += d_alpha * a * (1.0 - opacity[i])
                    d_pow = d_alpha * a
                    u1 = buf_u1[k]
                    u2 = buf_u2[k]
                    dp_du1 = -u1 * q1[i]
                    dp_du2 = -u2 * q2[i]
                    # d = pixel - pos, so d/dpos = -d/dd
                    part[e, 0] -= d_pow * (cs[i] * dp_du1 - sn[i] * dp_du2)
                    part[e, 1] -= d_pow * (sn[i] * dp_du1 + cs[i] * dp_du2)
                    part[e, 2] += d_pow * u1 * u1 * q1[i]
                    part[e, 3] += d_pow * u2 * u2 * q2[i]
                    part[e, 4] -= d_pow * u1 * u2 * (q1[i] - q2[i])
    return part, touched


@njit(cache=True)
def _reduce_entries(entries, part, touched, n_splats):
    out = np.zeros((n_splats, part.shape[1]))
    hit = np.zeros(n_splats, dtype=np.bool_)
    for e in range(entries.shape[0]):
        i = entries[e]
        for k in range(part.shape[1]):
            out[i, k] += part[e, k]
        if touched[e]:
            hit[i] = True
    return out, hit


@njit(cache=True)
def _contributors_kernel(h, w, c, tile, n_tx, offsets, entries, px, py, cs, sn, q1, q2,
                         opacity, color, rx, ry):
    counts = np.zeros(h * w + 1, dtype=np.int64)
    for pass_ in range(2):
        if pass_ == 1:
            counts = np.cumsum(counts)
            ids = np.empty(counts[-1], dtype=np.int64)
            weights = np.empty(counts[-1])
            trs = np.empty(counts[-1])
        for r in range(h):
            for col in range(w):
                t = (r // tile) * n_tx + col // tile
                p = r * w + col
                k = 0
                trans = 1.0
                for e in range(offsets[t], offsets[t + 1]):
                    i = entries[e]
                    dx = col + 0.5 - px[i]
                    dy = r + 0.5 - py[i]
                    if abs(dx) > rx[i] or abs(dy) > ry[i]:
                        continue
                    u1 = cs[i] * dx + sn[i] * dy
                    u2 = -sn[i] * dx + cs[i] * dy
                    a = opacity[i] * math.exp(-0.5 * (u1 * u1 * q1[i] + u2 * u2 * q2[i]))
                    if a < ALPHA_MIN:
                        continue
                    if pass_ == 0:
                        counts[p + 1] += 1
                    else:
                        ids[counts[p] + k] = i
                        weights[counts[p] + k] = a * trans
                        trs[counts[p] + k] = trans
                    k += 1
                    trans *= 1.0 - a
    return counts, ids, weights, trs


def render(field: SplatField, viewport=None, record_contributors: bool = False) -> RenderOutput:
    """Alpha-composite ``field`` onto an ``(H, W, C)`` image."""
    viewport = field.canvas[:2] if viewport is None else viewport
    prep = _Prepared(field, viewport)
    image = _forward_kernel(*prep.kernel_args())
    np.clip(image, 0.0, 1.0, out=image)
    contributors = None
    if record_contributors:
        contributors = _contributors_kernel(*prep.kernel_args())
    return RenderOutput(image=image, per_pixel_contributors=contributors)


def render_backward(field: SplatField, viewport, grad_image: np.ndarray) -> SplatGrads:
    """Per-splat gradients of ``sum(grad_image * render(field))``.

    Culling decisions match the forward pass; depth receives zero gradient
    because it only orders the blend.
    """
    viewport = field.canvas[:2] if viewport is None else viewport
    prep = _Prepared(field, viewport)
    grad_image = np.asarray(grad_image, dtype=np.float64)
    if grad_image.ndim == 2:
        grad_image = grad_image[:, :, None]
    if grad_image.shape != (prep.h, prep.w, prep.c):
        raise ShapeError(
            f"gradient image shape {grad_image.shape} does not match viewport "
            f"{(prep.h, prep.w, prep.c)}")
    part, touched = _backward_kernel(*prep.kernel_args(), prep.color_live,
                                     np.ascontiguousarray(grad_image))
    g, hit = _reduce_entries(prep.entries, part, touched, len(field))
    pos = g[:, 0:2].copy()
    return SplatGrads(
        pos=pos,
        log_scale=g[:, 2:4].copy(),
        rotation=g[:, 4].copy(),
        opacity_logit=g[:, 5].copy(),
        color=g[:, 6:].copy(),
        depth=np.zeros(len(field)),
        pos_grad_norm=np.hypot(pos[:, 0], pos[:, 1]),
        touched=hit,
    )
