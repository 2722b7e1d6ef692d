"""Loss terms and regularizers with analytic gradients.

The TV operator is anisotropic, masked and mean-normalized: the mean over
horizontal+vertical neighbor pairs (both endpoints masked-in) of the
channel-summed absolute difference, so weights stay meaningful across
resolutions. The surface-coverage loss is the TV of the alpha-normalized
position render ``(I - (1 - alpha)) / max(alpha, delta_alpha)`` with pixels
below an alpha floor masked out and the clamp treated as a gradient stop.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from uvsplat.errors import ContractError, NumericalError, ValidationError
from uvsplat.gsmap import OFFSET_RANGE, backprop_sample, sample_gaussians
from uvsplat.splat.project import project
from uvsplat.splat.render import position_unit_channels, rasterize


@dataclass
class LossWeights:
    lambda_3d: float = 50.0
    lambda_eye: float = 5.0
    lambda_pos: float = 1.0
    lambda_shape: float = 1.0
    lambda_shape_tv: float = 10.0
    lambda_photo: float = 1.0
    lambda_alpha: float = 1.0
    epsilon: float = 0.1
    delta_alpha: float = 1e-3
    alpha_floor: float = 0.05

    def validate(self):
        for name in ("lambda_3d", "lambda_eye", "lambda_pos", "lambda_shape",
                     "lambda_shape_tv", "lambda_photo", "lambda_alpha"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if not 0.0 < self.delta_alpha <= 0.1:
            raise ValidationError("delta_alpha must lie in (0, 0.1]")
        return self

    @classmethod
    def from_config(cls, cfg):
        return cls(lambda_3d=cfg.lambda_3d, lambda_eye=cfg.lambda_eye,
                   lambda_pos=cfg.lambda_pos, lambda_shape=cfg.lambda_shape,
                   lambda_shape_tv=cfg.lambda_shape_tv,
                   lambda_photo=cfg.lambda_photo, lambda_alpha=cfg.lambda_alpha,
                   epsilon=cfg.epsilon, delta_alpha=cfg.delta_alpha,
                   alpha_floor=cfg.alpha_floor).validate()

    def weight_of(self, term):
        return getattr(self, f"lambda_{term}")


TERMS = ("photo", "alpha", "3d", "eye", "pos", "shape", "shape_tv")


@dataclass
class LossReport:
    values: Dict[str, float]
    weights: Dict[str, float]
    total: float
    grad_norms: Dict[str, float] = field(default_factory=dict)

    def csv_rows(self, iteration):
        rows = [f"{iteration},{t},{self.values[t]!r}" for t in sorted(self.values)]
        rows.append(f"{iteration},total,{self.total!r}")
        return rows


def tv(image, mask=None):
    value, _ = tv_with_grad(image, mask, want_grad=False)
    return value


def tv_with_grad(image, mask=None, want_grad=True):
    """Masked anisotropic TV and its (sub)gradient; sign(0) = 0 at kinks."""
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    if mask is None:
        mask = np.ones(img.shape[:2], dtype=bool)
    mask = mask.astype(bool)

    dh = img[:, 1:] - img[:, :-1]
    mh = mask[:, 1:] & mask[:, :-1]
    dv = img[1:, :] - img[:-1, :]
    mv = mask[1:, :] & mask[:-1, :]
    n_pairs = int(mh.sum() + mv.sum())
    if n_pairs == 0:
        grad = np.zeros_like(img) if want_grad else None
        return 0.0, (grad[..., 0] if squeeze and want_grad else grad)
    total = float(np.abs(dh[mh]).sum() + np.abs(dv[mv]).sum())
    value = total / n_pairs
    if not want_grad:
        return value, None
    grad = np.zeros_like(img)
    sh = np.sign(dh) * mh[..., None] / n_pairs
    sv = np.sign(dv) * mv[..., None] / n_pairs
    grad[:, 1:] += sh
    grad[:, :-1] -= sh
    grad[1:, :] += sv
    grad[:-1, :] -= sv
    return value, (grad[..., 0] if squeeze else grad)


def _alpha_quotient_tv(render, expected_mode, delta_alpha, alpha_floor):
    """Shared core of the 3D- and UV-channel coverage losses."""
    mode = render.meta.get("mode")
    if mode != expected_mode:
        raise ContractError(
            f"render mode '{mode}' does not match loss contract '{expected_mode}'")
    bg = render.meta.get("background")
    if bg is None or not np.allclose(bg, 1.0):
        raise ContractError("coverage losses need a unit-background render")
    img = render.rgb
    alpha = render.alpha
    m = np.maximum(alpha, delta_alpha)
    quotient = (img - (1.0 - alpha)[..., None]) / m[..., None]
    mask = alpha >= alpha_floor
    value, g_q = tv_with_grad(quotient, mask)
    d_img = g_q / m[..., None]
    unclamped = alpha > delta_alpha
    d_alpha = g_q.sum(axis=2) / m - np.where(
        unclamped, (g_q * quotient).sum(axis=2) / m, 0.0)
    return value, d_img, d_alpha


def loss_3d(render, delta_alpha=1e-3, alpha_floor=0.05):
    """TV of the alpha-normalized position render; penalizes pixels whose
    neighbors are rendered from 3D-distant Gaussians (holes)."""
    return _alpha_quotient_tv(render, "position_unit", delta_alpha, alpha_floor)


def loss_uv(render, delta_alpha=1e-3, alpha_floor=0.05):
    """Baseline variant on UV-coordinate channels."""
    return _alpha_quotient_tv(render, "uv", delta_alpha, alpha_floor)


def loss_shape(shape_offset, epsilon, valid=None):
    """Hinged per-texel offset norm, mean over valid texels."""
    dp = np.asarray(shape_offset, dtype=np.float64)
    if valid is None:
        valid = np.ones(dp.shape[:2], dtype=bool)
    norms = np.linalg.norm(dp, axis=2)
    over = (norms > epsilon) & valid
    n = max(int(valid.sum()), 1)
    value = float(np.maximum(norms[valid] - epsilon, 0.0).sum()) / n
    grad = np.zeros_like(dp)
    nz = over & (norms > 1e-300)
    grad[nz] = dp[nz] / norms[nz, None] / n
    return value, grad


def loss_shape_tv(shape_offset, valid=None):
    return tv_with_grad(shape_offset, valid)


def loss_pos(offsets):
    """Root-mean-square of the activated position offsets."""
    off = np.asarray(offsets, dtype=np.float64)
    n = off.size
    if n == 0:
        return 0.0, np.zeros_like(off)
    value = float(np.sqrt((off ** 2).sum() / n))
    if value < 1e-300:
        return value, np.zeros_like(off)
    return value, off / (n * value)


def loss_region_tv(raw, region_valid):
    """TV of the raw attribute map restricted to a texel region."""
    return tv_with_grad(raw, region_valid)


def loss_photo(image, target):
    return _mae(image, target)


def loss_alpha(alpha, target_alpha):
    return _mae(alpha, target_alpha)


def _mae(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    value = float(np.abs(diff).mean())
    return value, np.sign(diff) / diff.size


@dataclass
class MapGrads:
    raw: np.ndarray
    shape_offset: np.ndarray

    def __iadd__(self, other):
        self.raw += other.raw
        self.shape_offset += other.shape_offset
        return self

    def scaled(self, s):
        return MapGrads(raw=self.raw * s, shape_offset=self.shape_offset * s)


class ObjectiveEvaluator:
    """Forward + backward of the weighted objective for a fixed scene.

    Holds the deformed-free (canonical) geometry, the sampling grid, the
    training cameras and their targets; ``evaluate`` runs the renders for a
    subset of cameras and assembles gradients w.r.t. the raw attribute map
    and the shape-offset map.
    """

    def __init__(self, atlas, verts, grid, cameras, target_rgb, target_alpha,
                 weights, box, eye_mask=None, threads=1, backend=None):
        self.atlas = atlas
        self.verts = verts
        self.grid = grid
        self.cameras = cameras
        self.target_rgb = target_rgb
        self.target_alpha = target_alpha
        self.weights = weights.validate()
        self.box = box
        self.eye_mask = eye_mask
        self.threads = threads
        self.backend = backend

    def evaluate(self, maps, cam_indices=None, want_grads=True,
                 per_term=False):
        """Returns (LossReport, MapGrads or None, per-term MapGrads dict or
        None). Raises NumericalError if any term is non-finite."""
        if cam_indices is None:
            cam_indices = list(range(len(self.cameras)))
        w = self.weights
        sample = sample_gaussians(maps, self.atlas, self.grid, self.verts)
        g = sample.gaussians
        extent = np.asarray(self.box[1]) - np.asarray(self.box[0])
        chan_pos = position_unit_channels(g, self.box)

        values = {t: 0.0 for t in TERMS}
        pending = []  # (term, render, d_rgb, d_alpha, kind)
        n_cams = len(cam_indices)
        for ci in cam_indices:
            cam = self.cameras[ci]
            splats = project(g, cam)
            out_c = rasterize(splats, g.color, cam, background=0.0,
                              threads=self.threads, backend=self.backend,
                              retain=want_grads)
            out_p = rasterize(splats, chan_pos, cam, background=1.0,
                              threads=self.threads, backend=self.backend,
                              retain=want_grads)
            out_p.meta["mode"] = "position_unit"
            v_photo, d_photo = loss_photo(out_c.rgb, self.target_rgb[ci])
            v_alpha, d_alpha = loss_alpha(out_c.alpha, self.target_alpha[ci])
            v_3d, d_img3, d_alpha3 = loss_3d(out_p, w.delta_alpha, w.alpha_floor)
            values["photo"] += v_photo / n_cams
            values["alpha"] += v_alpha / n_cams
            values["3d"] += v_3d / n_cams
            if want_grads:
                pending.append(("photo", out_c, d_photo / n_cams, None))
                pending.append(("alpha", out_c, None, d_alpha / n_cams))
                pending.append(("3d", out_p, d_img3 / n_cams, d_alpha3 / n_cams))

        offsets = OFFSET_RANGE * sample.ctx.tanh_off
        v_pos, d_off = loss_pos(offsets)
        values["pos"] = v_pos
        eye_mask = self.eye_mask if self.eye_mask is not None else \
            np.zeros((self.atlas.k,) * 2, dtype=bool)
        v_eye, d_eye = loss_region_tv(maps.raw, eye_mask & self.atlas.valid)
        values["eye"] = v_eye
        v_shape, d_shape_h = loss_shape(maps.shape_offset, w.epsilon,
                                        self.atlas.valid)
        values["shape"] = v_shape
        v_stv, d_stv = loss_shape_tv(maps.shape_offset, self.atlas.valid)
        values["shape_tv"] = v_stv

        weights = {t: w.weight_of(t) for t in TERMS}
        total = 0.0
        for t in TERMS:
            total += weights[t] * values[t]
        if not np.isfinite(total):
            bad = [t for t in TERMS if not np.isfinite(values[t])]
            raise NumericalError(f"non-finite loss terms: {bad}")

        report = LossReport(values=dict(values), weights=weights, total=total)
        if not want_grads:
            return report, None, None

        def chain(term_pendings, d_offset=None, d_raw_direct=None,
                  d_shape_direct=None):
            d_pos = None
            d_rot = None
            d_scale = None
            d_opac = None
            d_color = None
            for _, render, d_rgb, d_al in term_pendings:
                grads = render.backward(d_rgb, d_al)
                if d_pos is None:
                    n = grads.position.shape[0]
                    d_pos = np.zeros((n, 3))
                    d_rot = np.zeros((n, 4))
                    d_scale = np.zeros((n, 3))
                    d_opac = np.zeros(n)
                    d_color = np.zeros((n, 3))
                d_pos += grads.position
                d_rot += grads.rotation
                d_scale += grads.scale
                d_opac += grads.opacity
                if render.meta.get("mode") == "position_unit":
                    d_pos += grads.channels / extent
                else:
                    d_color += grads.channels
            if d_pos is None and d_offset is None:
                d_raw = np.zeros_like(maps.raw)
                d_shape = np.zeros_like(maps.shape_offset)
            else:
                d_raw, d_shape = backprop_sample(
                    sample.ctx, d_position=d_pos, d_rotation=d_rot,
                    d_scale=d_scale, d_opacity=d_opac, d_color=d_color,
                    d_offset=d_offset)
            if d_raw_direct is not None:
                d_raw = d_raw + d_raw_direct
            if d_shape_direct is not None:
                d_shape = d_shape + d_shape_direct
            return MapGrads(raw=d_raw, shape_offset=d_shape)

        per_term_grads = None
        if per_term:
            per_term_grads = {}
            for t in TERMS:
                mine = [p for p in pending if p[0] == t]
                per_term_grads[t] = chain(
                    mine,
                    d_offset=d_off if t == "pos" else None,
                    d_raw_direct=d_eye if t == "eye" else None,
                    d_shape_direct=(d_shape_h if t == "shape" else
                                    d_stv if t == "shape_tv" else None))
            total_grads = MapGrads(raw=np.zeros_like(maps.raw),
                                   shape_offset=np.zeros_like(maps.shape_offset))
            for t in TERMS:
                total_grads += per_term_grads[t].scaled(weights[t])
        else:
            scaled = []
            for t, render, d_rgb, d_al in pending:
                lam = weights[t]
                scaled.append((t, render,
                               None if d_rgb is None else d_rgb * lam,
                               None if d_al is None else d_al * lam))
            # merge the photometric and alpha adjoints that share a render
            merged = {}
            for t, render, d_rgb, d_al in scaled:
                key = id(render)
                if key not in merged:
                    merged[key] = [t, render, None, None]
                ent = merged[key]
                if d_rgb is not None:
                    ent[2] = d_rgb if ent[2] is None else ent[2] + d_rgb
                if d_al is not None:
                    ent[3] = d_al if ent[3] is None else ent[3] + d_al
            total_grads = chain(
                [tuple(v) for v in merged.values()],
                d_offset=d_off * weights["pos"],
                d_raw_direct=d_eye * weights["eye"],
                d_shape_direct=d_shape_h * weights["shape"]
                + d_stv * weights["shape_tv"])

        report.grad_norms = {
            "raw": float(np.linalg.norm(total_grads.raw)),
            "shape_offset": float(np.linalg.norm(total_grads.shape_offset)),
        }
        return report, total_grads, per_term_grads
