"""UV Gaussian attribute maps and their sampling into rigged 3D primitives.

The raw map holds 14 pre-activation channels per texel in the fixed order
[color:3, rotation:4, scale:3, opacity:1, position_offset:3]; a separate
3-channel shape-offset map refines the surface position map. Sampling is
bilinear over valid texels with the weights renormalized so invalid zeros
never bleed into boundary Gaussians. Activations: logistic for color and
opacity, `rel_scale * exp(raw)` clamped to [1e-5, 0.5] for scale, normalized
`raw + (1,0,0,0)` for the local rotation, and `0.05 * tanh(raw)` for the
tangent-frame offset.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from uvsplat.errors import ValidationError
from uvsplat.formats.atl import read_atl, write_atl
from uvsplat.geometry.atlas import position_map, triangle_frames
from uvsplat.geometry.mesh import deform
from uvsplat.quat import quat_left_matrix, quat_mul

RAW_CHANNELS = 14
COLOR = slice(0, 3)
ROTATION = slice(3, 7)
SCALE = slice(7, 10)
OPACITY = 10
OFFSET = slice(11, 14)

SCALE_MIN = 1e-5
SCALE_MAX = 0.5
OFFSET_RANGE = 0.05

PROV_DENSE, PROV_HAIR, PROV_VERTEX = 0, 1, 2


@dataclass
class AttributeMaps:
    raw: np.ndarray            # (K, K, 14) pre-activation
    shape_offset: np.ndarray   # (K, K, 3) head units

    @property
    def k(self):
        return self.raw.shape[0]

    @classmethod
    def zeros(cls, k):
        return cls(raw=np.zeros((k, k, RAW_CHANNELS)),
                   shape_offset=np.zeros((k, k, 3)))

    def validate(self, atlas=None):
        if self.raw.ndim != 3 or self.raw.shape[2] != RAW_CHANNELS:
            raise ValidationError(
                f"raw map must be KxKx{RAW_CHANNELS}, got {self.raw.shape}")
        if self.shape_offset.shape != self.raw.shape[:2] + (3,):
            raise ValidationError("shape-offset map does not match the raw map")
        if not np.all(np.isfinite(self.raw)) or not np.all(np.isfinite(self.shape_offset)):
            raise ValidationError("attribute maps contain non-finite values")
        if atlas is not None and np.any(self.shape_offset[~atlas.valid] != 0):
            raise ValidationError("shape offset must be zero on invalid texels")
        return self

    def save(self, path):
        write_atl(path, np.concatenate([self.raw, self.shape_offset], axis=2))

    @classmethod
    def load(cls, path):
        data = read_atl(path).astype(np.float64)
        if data.ndim != 3 or data.shape[2] != RAW_CHANNELS + 3:
            raise ValidationError(
                f"{path}: expected KxKx{RAW_CHANNELS + 3} tensor, got {data.shape}")
        return cls(raw=data[:, :, :RAW_CHANNELS], shape_offset=data[:, :, RAW_CHANNELS:])


@dataclass
class SampleGrid:
    uv: np.ndarray          # (N, 2)
    provenance: np.ndarray  # (N,) int8

    def __len__(self):
        return self.uv.shape[0]


@dataclass
class GaussianSet:
    position: np.ndarray   # (N, 3)
    rotation: np.ndarray   # (N, 4) unit quaternions
    scale: np.ndarray      # (N, 3) in [SCALE_MIN, SCALE_MAX]
    opacity: np.ndarray    # (N,)
    color: np.ndarray      # (N, 3)
    rig_uv: np.ndarray     # (N, 2)
    rig_tri: np.ndarray    # (N,) triangle index

    def __len__(self):
        return self.position.shape[0]

    def validate(self):
        if not np.allclose(np.linalg.norm(self.rotation, axis=1), 1.0, atol=1e-6):
            raise ValidationError("rotations are not unit quaternions")
        if self.scale.min(initial=SCALE_MIN) < SCALE_MIN - 1e-12 or \
           self.scale.max(initial=0.0) > SCALE_MAX + 1e-12:
            raise ValidationError("scales outside [1e-5, 0.5]")
        for name, arr in (("opacity", self.opacity), ("color", self.color)):
            if arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
                raise ValidationError(f"{name} outside [0, 1]")
        return self


def default_sample_grid(atlas, dense=(256, 256), hair=(1024, 128),
                        include_vertices=True):
    """Dense texel-center grid on valid non-hair texels, a finer grid on the
    hair region, and per-vertex UV samples; near-duplicates (1e-7) removed."""
    hair_mask = atlas.region_masks.get("hair")
    if hair_mask is None:
        hair_mask = np.zeros((atlas.k, atlas.k), dtype=bool)

    chunks = []

    def grid_points(w, h):
        u = (np.arange(w) + 0.5) / w
        v = (np.arange(h) + 0.5) / h
        uu, vv = np.meshgrid(u, v, indexing="xy")
        return np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1)

    def texel_of(pts):
        cols = np.clip((pts[:, 0] * atlas.k).astype(np.int64), 0, atlas.k - 1)
        rows = np.clip((pts[:, 1] * atlas.k).astype(np.int64), 0, atlas.k - 1)
        return rows, cols

    if dense is not None:
        pts = grid_points(*dense)
        rows, cols = texel_of(pts)
        keep = atlas.valid[rows, cols] & ~hair_mask[rows, cols]
        chunks.append((pts[keep], PROV_DENSE))
    if hair is not None:
        pts = grid_points(*hair)
        rows, cols = texel_of(pts)
        keep = atlas.valid[rows, cols] & hair_mask[rows, cols]
        chunks.append((pts[keep], PROV_HAIR))
    if include_vertices:
        pts = np.unique(atlas.uv_corners.reshape(-1, 2), axis=0)
        chunks.append((pts, PROV_VERTEX))

    if not chunks:
        raise ValidationError("sample grid spec produced no point sources")
    uv = np.concatenate([pts for pts, _ in chunks], axis=0)
    prov = np.concatenate([np.full(len(pts), p, dtype=np.int8) for pts, p in chunks])

    # stable dedupe at 1e-7 UV resolution
    quant = np.round(uv / 1e-7).astype(np.int64)
    _, first = np.unique(quant, axis=0, return_index=True)
    keep = np.zeros(len(uv), dtype=bool)
    keep[first] = True
    uv, prov = uv[keep], prov[keep]
    if len(uv) == 0:
        raise ValidationError("sample grid is empty")
    return SampleGrid(uv=uv, provenance=prov)


def apply_shape_offset(p, shape_offset, valid=None):
    """Refined position map: elementwise sum on valid texels."""
    if p.shape != shape_offset.shape:
        raise ValidationError(
            f"position map {p.shape} and shape offset {shape_offset.shape} differ")
    if valid is None:
        return p + shape_offset
    out = p.copy()
    out[valid] += shape_offset[valid]
    return out


def _bilinear_weights(atlas, uv):
    """Neighbor indices and validity-renormalized weights per sample point.

    Returns (rows, cols, weights, kept) where rows/cols/weights are (M, 4)
    for the kept points; points with no valid neighbor are dropped.
    """
    k = atlas.k
    x = uv[:, 0] * k - 0.5
    y = uv[:, 1] * k - 0.5
    c0 = np.floor(x).astype(np.int64)
    r0 = np.floor(y).astype(np.int64)
    fx = x - c0
    fy = y - r0
    cols = np.stack([c0, c0 + 1, c0, c0 + 1], axis=1)
    rows = np.stack([r0, r0, r0 + 1, r0 + 1], axis=1)
    weights = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy),
                        (1 - fx) * fy, fx * fy], axis=1)
    inside = (cols >= 0) & (cols < k) & (rows >= 0) & (rows < k)
    cc = np.clip(cols, 0, k - 1)
    rr = np.clip(rows, 0, k - 1)
    ok = inside & atlas.valid[rr, cc]
    weights = np.where(ok, weights, 0.0)
    wsum = weights.sum(axis=1)
    kept = wsum > 1e-12
    weights = weights[kept] / wsum[kept, None]
    return rr[kept], cc[kept], weights, kept


@dataclass
class SampleContext:
    """Everything needed to push per-Gaussian gradients back into map space."""
    k: int
    rows: np.ndarray           # (M, 4)
    cols: np.ndarray
    weights: np.ndarray
    raw: np.ndarray            # (M, 14) bilinear raw samples
    rel_scale: np.ndarray      # (M,)
    frame_mats: np.ndarray     # (M, 3, 3)
    frame_quats: np.ndarray    # (M, 4)
    local_quat: np.ndarray     # (M, 4) normalized raw rotation
    local_norm: np.ndarray     # (M,)
    world_scale: np.ndarray    # (M, 3) pre-clamp
    scale_clamped: np.ndarray  # (M, 3) bool
    opacity: np.ndarray        # (M,)
    color: np.ndarray          # (M, 3)
    tanh_off: np.ndarray       # (M, 3)
    identity_transport: bool = True


@dataclass
class SampleResult:
    gaussians: GaussianSet
    ctx: SampleContext
    dropped: int = 0
    n_scale_clamped: int = 0
    diagnostics: Dict[str, float] = field(default_factory=dict)


def sample_gaussians(maps, atlas, grid, verts, canonical_verts=None):
    """Sample the attribute maps at the grid points into a GaussianSet.

    ``canonical_verts`` enables rigid transport of the shape offset: the
    offset is expressed in the canonical tangent frame and re-applied in the
    deformed frame, so a rigid motion of the mesh moves refined positions
    rigidly. Without it the offset is applied elementwise (canonical use).
    """
    maps.validate(atlas)
    if maps.k != atlas.k:
        raise ValidationError(f"map K={maps.k} and atlas K={atlas.k} differ")

    p_map = position_map(atlas, verts)
    frames_f, quats_f, _ = triangle_frames(atlas, verts)
    identity_transport = canonical_verts is None
    if identity_transport:
        p_r = apply_shape_offset(p_map, maps.shape_offset, atlas.valid)
    else:
        frames_c, _, _ = triangle_frames(atlas, canonical_verts)
        transport = frames_f @ np.transpose(frames_c, (0, 2, 1))
        p_r = p_map.copy()
        tri = atlas.tri_index[atlas.valid]
        p_r[atlas.valid] += np.einsum(
            "nab,nb->na", transport[tri], maps.shape_offset[atlas.valid])

    rows, cols, weights, kept = _bilinear_weights(atlas, grid.uv)
    dropped = int((~kept).sum())
    uv = grid.uv[kept]

    flat = rows * atlas.k + cols
    raw = np.einsum("mn,mnc->mc", weights,
                    maps.raw.reshape(-1, RAW_CHANNELS)[flat])
    rel = np.einsum("mn,mn->m", weights, atlas.rel_scale.reshape(-1)[flat])
    pr_s = np.einsum("mn,mnc->mc", weights, p_r.reshape(-1, 3)[flat])

    # frame from the valid neighbor with the largest bilinear weight
    pick = np.argmax(weights, axis=1)
    m_idx = np.arange(len(pick))
    tex = flat[m_idx, pick]
    tri = atlas.tri_index.reshape(-1)[tex]
    frame_mats = frames_f[tri]
    frame_quats = quats_f[tri]

    color = _logistic(raw[:, COLOR])
    opacity = _logistic(raw[:, OPACITY])
    vrot = raw[:, ROTATION].copy()
    vrot[:, 0] += 1.0
    vnorm = np.linalg.norm(vrot, axis=1)
    local_quat = vrot / vnorm[:, None]
    world_scale = rel[:, None] * np.exp(raw[:, SCALE])
    clamped = (world_scale < SCALE_MIN) | (world_scale > SCALE_MAX)
    scale = np.clip(world_scale, SCALE_MIN, SCALE_MAX)
    tanh_off = np.tanh(raw[:, OFFSET])
    offset = OFFSET_RANGE * tanh_off
    position = pr_s + np.einsum("mab,mb->ma", frame_mats, offset)
    rotation = quat_mul(frame_quats, local_quat)

    gaussians = GaussianSet(position=position, rotation=rotation, scale=scale,
                            opacity=opacity, color=color, rig_uv=uv,
                            rig_tri=tri.astype(np.int64))
    ctx = SampleContext(k=atlas.k, rows=rows, cols=cols, weights=weights,
                        raw=raw, rel_scale=rel, frame_mats=frame_mats,
                        frame_quats=frame_quats, local_quat=local_quat,
                        local_norm=vnorm, world_scale=world_scale,
                        scale_clamped=clamped, opacity=opacity, color=color,
                        tanh_off=tanh_off,
                        identity_transport=identity_transport)
    return SampleResult(gaussians=gaussians, ctx=ctx, dropped=dropped,
                        n_scale_clamped=int(clamped.sum()))


def animate(maps, atlas, grid, mesh, params):
    """Re-evaluate the rigged Gaussians under a new pose/expression; the raw
    attribute maps are pose-independent."""
    verts = deform(mesh, params)
    return sample_gaussians(maps, atlas, grid, verts,
                            canonical_verts=mesh.vertices)


def backprop_sample(ctx, d_position=None, d_rotation=None, d_scale=None,
                    d_opacity=None, d_color=None, d_offset=None):
    """Chain per-Gaussian gradients through activations, frame composition
    and the bilinear weights into (d_raw, d_shape_offset) map gradients.

    ``d_offset`` is an extra gradient w.r.t. the activated local offset (the
    position-offset regularizer uses it).
    """
    if not ctx.identity_transport:
        raise ValidationError(
            "map gradients are only defined for the canonical sampling path")
    m = ctx.raw.shape[0]
    d_raw = np.zeros((m, RAW_CHANNELS))
    d_shape = None

    if d_color is not None:
        d_raw[:, COLOR] += d_color * ctx.color * (1.0 - ctx.color)
    if d_opacity is not None:
        d_raw[:, OPACITY] += d_opacity * ctx.opacity * (1.0 - ctx.opacity)
    if d_scale is not None:
        d_raw[:, SCALE] += np.where(ctx.scale_clamped, 0.0,
                                    d_scale * ctx.world_scale)
    if d_rotation is not None:
        # world = frame * local, linear in local
        left = quat_left_matrix(ctx.frame_quats)
        d_local = np.einsum("mba,mb->ma", left, d_rotation)
        # normalization of v = raw_rot + e0
        proj = d_local - ctx.local_quat * np.einsum(
            "mi,mi->m", ctx.local_quat, d_local)[:, None]
        d_raw[:, ROTATION] += proj / ctx.local_norm[:, None]

    d_off_total = np.zeros((m, 3))
    if d_position is not None:
        d_off_total += np.einsum("mba,mb->ma", ctx.frame_mats, d_position)
    if d_offset is not None:
        d_off_total += d_offset
    d_raw[:, OFFSET] += OFFSET_RANGE * (1.0 - ctx.tanh_off ** 2) * d_off_total

    k = ctx.k
    d_raw_map = np.zeros((k * k, RAW_CHANNELS))
    flat = ctx.rows * k + ctx.cols
    np.add.at(d_raw_map, flat.reshape(-1),
              (ctx.weights[:, :, None] * d_raw[:, None, :]).reshape(-1, RAW_CHANNELS))

    d_shape = np.zeros((k * k, 3))
    if d_position is not None:
        np.add.at(d_shape, flat.reshape(-1),
                  (ctx.weights[:, :, None] * d_position[:, None, :]).reshape(-1, 3))
    return d_raw_map.reshape(k, k, RAW_CHANNELS), d_shape.reshape(k, k, 3)


def _logistic(x):
    return 1.0 / (1.0 + np.exp(-x))
