"""Forward/backward tile splatting over projected Gaussians.

Compositing per pixel, strictly increasing depth (ties by index):
``c_out = sum_i c_i d_i T_i + bg * T_end`` with per-splat weight
``d = opacity * exp(-0.5 x^T cov2^-1 x)`` clamped to 0.999, contributions
below 1e-8 skipped, and the pixel terminated before any splat that would
drop its transmittance under 1e-4 (so ``alpha <= 1 - 1e-4`` always).

The tiled kernel and the all-splats-per-pixel reference agree because tile
binning uses a radius beyond which the weight is provably below the skip
threshold. Determinism across thread counts follows from tiles owning their
pixels and the pair reduction running in fixed order.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from uvsplat.errors import ContractError, ValidationError
from uvsplat.splat.project import backprop_projection, project

TILE = 16
ALPHA_MAX = 0.999
ALPHA_MIN = 1e-8
T_EPS = 1e-4
RADIUS_SCALE = math.sqrt(2.0 * math.log(ALPHA_MAX / ALPHA_MIN))

_BACKENDS = {}
_DEFAULT_BACKEND = "auto"


def register_backend(name, module):
    _BACKENDS[name] = module


def set_default_backend(name):
    global _DEFAULT_BACKEND
    _DEFAULT_BACKEND = name


def available_backends():
    return sorted(_BACKENDS)


def _resolve_backend(name):
    if name is None:
        name = _DEFAULT_BACKEND
    if name == "auto":
        name = "compiled" if "compiled" in _BACKENDS else "python"
    if name not in _BACKENDS:
        raise ValidationError(
            f"unknown rasterizer backend '{name}' (have: {available_backends()})")
    return name, _BACKENDS[name]


@dataclass
class RenderOutput:
    rgb: np.ndarray            # (H, W, C); generic channels in override modes
    alpha: np.ndarray          # (H, W)
    contributors: np.ndarray   # (H, W) int32
    meta: dict = field(default_factory=dict)
    ctx: Optional["RasterContext"] = None

    def backward(self, d_rgb=None, d_alpha=None):
        if self.ctx is None:
            raise ContractError(
                "backward needs a forward pass retained with retain=True")
        return self.ctx.backward(d_rgb, d_alpha)


@dataclass
class SplatGrads:
    position: np.ndarray   # (N, 3)
    rotation: np.ndarray   # (N, 4)
    scale: np.ndarray      # (N, 3)
    opacity: np.ndarray    # (N,)
    channels: np.ndarray   # (N, C)


@dataclass
class RasterContext:
    splats: object
    order: np.ndarray
    mean_s: np.ndarray
    qcov_s: np.ndarray
    qinv_s: np.ndarray      # (n, 2, 2) inverse covariance matrices (sorted)
    opac_s: np.ndarray
    chan_s: np.ndarray
    pair_splat: np.ndarray
    tile_start: np.ndarray
    tile_end: np.ndarray
    bg: np.ndarray
    t_end: np.ndarray
    stop_pos: np.ndarray
    width: int
    height: int
    threads: int
    backend: str

    def backward(self, d_rgb=None, d_alpha=None):
        h, w = self.height, self.width
        n_chan = self.chan_s.shape[1]
        if d_rgb is None:
            d_rgb = np.zeros((h, w, n_chan))
        if d_alpha is None:
            d_alpha = np.zeros((h, w))
        d_rgb = np.ascontiguousarray(d_rgb, dtype=np.float64)
        d_alpha = np.ascontiguousarray(d_alpha, dtype=np.float64)
        if d_rgb.shape != (h, w, n_chan) or d_alpha.shape != (h, w):
            raise ValidationError("adjoint image shapes do not match the render")

        _, kernels = _resolve_backend(self.backend)
        n_pairs = self.pair_splat.shape[0]
        if self.backend == "python":
            pd_mean, pd_q, pd_opac, pd_chan = kernels.backward(
                self.mean_s, self.qcov_s, self.opac_s, self.chan_s,
                self.pair_splat, self.tile_start, self.tile_end,
                w, h, TILE, self.bg, ALPHA_MIN, ALPHA_MAX, T_EPS,
                self.t_end, self.stop_pos, d_rgb, d_alpha,
                threads=self.threads)
        else:
            pd_mean = np.zeros((n_pairs, 2))
            pd_q = np.zeros((n_pairs, 3))
            pd_opac = np.zeros(n_pairs)
            pd_chan = np.zeros((n_pairs, n_chan))
            kernels.backward(
                self.mean_s, self.qcov_s, self.opac_s, self.chan_s,
                self.pair_splat, self.tile_start, self.tile_end,
                w, h, TILE, self.bg, ALPHA_MIN, ALPHA_MAX, T_EPS,
                int(self.threads), self.t_end, self.stop_pos, d_rgb, d_alpha,
                pd_mean, pd_q, pd_opac, pd_chan)

        n_sorted = self.mean_s.shape[0]
        sd_mean = np.zeros((n_sorted, 2))
        sd_q = np.zeros((n_sorted, 3))
        sd_opac = np.zeros(n_sorted)
        sd_chan = np.zeros((n_sorted, n_chan))
        np.add.at(sd_mean, self.pair_splat, pd_mean)
        np.add.at(sd_q, self.pair_splat, pd_q)
        np.add.at(sd_opac, self.pair_splat, pd_opac)
        np.add.at(sd_chan, self.pair_splat, pd_chan)

        # dL/dQ -> dL/dcov2 via dQ = -Q dCov Q
        gq = np.empty((n_sorted, 2, 2))
        gq[:, 0, 0] = sd_q[:, 0]
        gq[:, 0, 1] = gq[:, 1, 0] = 0.5 * sd_q[:, 1]
        gq[:, 1, 1] = sd_q[:, 2]
        d_cov2_s = -self.qinv_s @ gq @ self.qinv_s

        splats = self.splats
        n_kept = len(splats)
        d_mean2 = np.zeros((n_kept, 2))
        d_cov2 = np.zeros((n_kept, 2, 2))
        d_opac_kept = np.zeros(n_kept)
        d_chan_kept = np.zeros((n_kept, n_chan))
        d_mean2[self.order] = sd_mean
        d_cov2[self.order] = d_cov2_s
        d_opac_kept[self.order] = sd_opac
        d_chan_kept[self.order] = sd_chan

        d_pos_k, d_rot_k, d_scale_k = backprop_projection(splats, d_mean2, d_cov2)

        n = splats.n_total
        grads = SplatGrads(position=np.zeros((n, 3)), rotation=np.zeros((n, 4)),
                           scale=np.zeros((n, 3)), opacity=np.zeros(n),
                           channels=np.zeros((n, n_chan)))
        grads.position[splats.index] = d_pos_k
        grads.rotation[splats.index] = d_rot_k
        grads.scale[splats.index] = d_scale_k
        grads.opacity[splats.index] = d_opac_kept
        grads.channels[splats.index] = d_chan_kept
        return grads


def _inverse_cov(cov2):
    a = cov2[:, 0, 0]
    b = cov2[:, 0, 1]
    c = cov2[:, 1, 1]
    det = a * c - b * b
    qcov = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    radius = RADIUS_SCALE * np.sqrt(lam_max)
    return qcov, radius


def _sort_and_bin(mean2, depth, radius, width, height):
    order = np.argsort(depth, kind="stable")
    mean_s = np.ascontiguousarray(mean2[order])
    r_s = radius[order]

    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE
    x0 = np.floor(mean_s[:, 0] - r_s - 0.5).astype(np.int64)
    x1 = np.ceil(mean_s[:, 0] + r_s - 0.5).astype(np.int64)
    y0 = np.floor(mean_s[:, 1] - r_s - 0.5).astype(np.int64)
    y1 = np.ceil(mean_s[:, 1] + r_s - 0.5).astype(np.int64)
    x0 = np.clip(x0, 0, width - 1)
    x1 = np.clip(x1, 0, width - 1)
    y0 = np.clip(y0, 0, height - 1)
    y1 = np.clip(y1, 0, height - 1)
    onscreen = (mean_s[:, 0] + r_s > 0) & (mean_s[:, 0] - r_s < width) & \
               (mean_s[:, 1] + r_s > 0) & (mean_s[:, 1] - r_s < height)
    tx0, tx1 = x0 // TILE, x1 // TILE
    ty0, ty1 = y0 // TILE, y1 // TILE
    wx = np.where(onscreen, tx1 - tx0 + 1, 0)
    wy = np.where(onscreen, ty1 - ty0 + 1, 0)
    counts = wx * wy
    total = int(counts.sum())
    if total == 0:
        pair_splat = np.zeros(0, dtype=np.int64)
        pair_tile = np.zeros(0, dtype=np.int64)
    else:
        offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
        pair_splat = np.repeat(np.arange(len(order), dtype=np.int64), counts)
        local = np.arange(total, dtype=np.int64) - np.repeat(offsets, counts)
        wx_r = np.repeat(np.maximum(wx, 1), counts)
        lx = local % wx_r
        ly = local // wx_r
        pair_tile = (np.repeat(ty0, counts) + ly) * ntx + np.repeat(tx0, counts) + lx
        tile_order = np.argsort(pair_tile, kind="stable")
        pair_splat = pair_splat[tile_order]
        pair_tile = pair_tile[tile_order]
    n_tiles = ntx * nty
    tile_start = np.searchsorted(pair_tile, np.arange(n_tiles), side="left")
    tile_end = np.searchsorted(pair_tile, np.arange(n_tiles), side="right")
    return order, mean_s, pair_splat, tile_start.astype(np.int64), tile_end.astype(np.int64)


def rasterize(splats, channels, cam, background=0.0, threads=1, backend=None,
              retain=False):
    """Composite projected splats with per-Gaussian ``channels`` values.

    ``channels`` indexes the *original* GaussianSet (n_total rows); culled
    Gaussians are ignored. Returns a RenderOutput; pass ``retain=True`` to
    keep the context needed by ``RenderOutput.backward``.
    """
    backend_name, kernels = _resolve_backend(backend)
    channels = np.asarray(channels, dtype=np.float64)
    if channels.ndim == 1:
        channels = channels[:, None]
    if channels.shape[0] != splats.n_total:
        raise ValidationError(
            f"channels rows {channels.shape[0]} != gaussian count {splats.n_total}")
    if not np.all(np.isfinite(channels)):
        raise ValidationError("non-finite channel values")
    for name, arr in (("means", splats.mean2), ("covariances", splats.cov2),
                      ("opacities", splats.opacity)):
        if not np.all(np.isfinite(arr)):
            raise ValidationError(f"non-finite splat {name}")

    n_chan = channels.shape[1]
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64),
                         (n_chan,)).copy()
    w, h = cam.width, cam.height

    chan_kept = np.ascontiguousarray(channels[splats.index])
    qcov, radius = _inverse_cov(splats.cov2)
    order, mean_s, pair_splat, tile_start, tile_end = _sort_and_bin(
        splats.mean2, splats.depth, radius, w, h)
    qcov_s = np.ascontiguousarray(qcov[order])
    opac_s = np.ascontiguousarray(np.minimum(splats.opacity[order], 1.0))
    chan_s = np.ascontiguousarray(chan_kept[order])

    if backend_name == "python":
        out, t_end, stop_pos, contrib = kernels.forward(
            mean_s, qcov_s, opac_s, chan_s, pair_splat, tile_start, tile_end,
            w, h, TILE, bg, ALPHA_MIN, ALPHA_MAX, T_EPS, threads=threads)
    else:
        out = np.zeros((h, w, n_chan))
        t_end = np.ones((h, w))
        stop_pos = np.zeros((h, w), dtype=np.int64)
        contrib = np.zeros((h, w), dtype=np.int32)
        kernels.forward(mean_s, qcov_s, opac_s, chan_s, pair_splat,
                        tile_start, tile_end, w, h, TILE, bg,
                        ALPHA_MIN, ALPHA_MAX, T_EPS, int(max(1, threads)),
                        out, t_end, stop_pos, contrib)

    render = RenderOutput(rgb=out, alpha=1.0 - t_end, contributors=contrib,
                          meta={"backend": backend_name,
                                "n_culled": splats.n_culled,
                                "background": bg})
    if retain:
        qinv_s = np.empty((len(order), 2, 2))
        qinv_s[:, 0, 0] = qcov_s[:, 0]
        qinv_s[:, 0, 1] = qinv_s[:, 1, 0] = qcov_s[:, 1]
        qinv_s[:, 1, 1] = qcov_s[:, 2]
        render.ctx = RasterContext(
            splats=splats, order=order, mean_s=mean_s, qcov_s=qcov_s,
            qinv_s=qinv_s, opac_s=opac_s, chan_s=chan_s,
            pair_splat=pair_splat, tile_start=tile_start, tile_end=tile_end,
            bg=bg, t_end=t_end, stop_pos=stop_pos, width=w, height=h,
            threads=threads, backend=backend_name)
    return render


def position_unit_channels(gaussians, box):
    lo, hi = box
    extent = np.asarray(hi, dtype=np.float64) - np.asarray(lo, dtype=np.float64)
    if np.any(extent < 1e-9):
        raise ValidationError(f"degenerate bounding box, extent {extent}")
    return (gaussians.position - lo) / extent


def default_box(positions, pad=0.05):
    lo = positions.min(axis=0)
    hi = positions.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    return lo - pad * span, hi + pad * span


def render_override(gaussians, mode, cam, box=None, background=None,
                    threads=1, backend=None, retain=False):
    """Render with substituted channels: ``color`` (black background),
    ``position_unit`` (positions mapped into the unit box, background 1 so
    the alpha-quotient cancels it), or ``uv`` (rig coordinates, background 1).
    """
    splats = project(gaussians, cam)
    if mode == "color":
        channels = gaussians.color
        bg = 0.0 if background is None else background
    elif mode == "position_unit":
        if box is None:
            box = default_box(gaussians.position)
        channels = position_unit_channels(gaussians, box)
        bg = 1.0 if background is None else background
    elif mode == "uv":
        channels = gaussians.rig_uv
        bg = 1.0 if background is None else background
    else:
        raise ValidationError(f"unknown override mode '{mode}'")
    render = rasterize(splats, channels, cam, background=bg, threads=threads,
                       backend=backend, retain=retain)
    render.meta["mode"] = mode
    if mode == "position_unit":
        render.meta["box"] = box
    return render
