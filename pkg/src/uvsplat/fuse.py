"""Source-view visibility and the symmetric UV feature fusion stack.

All learned components are replaced by fixed, seeded machinery so the
mechanism itself is testable: orthonormal projection matrices for the
windowed cross-attention, a cosine-similarity rule for the occlusion mask,
and a seeded 1x1 convolution for the final merge. Horizontal flips go
through the atlas mirror map, never raw array reversal, so non-rectangular
UV islands mirror correctly.

Per query texel the attention keys are the valid-and-visible texels of the
local map inside the w x w window at the texel plus the w x w window at its
mirror; texels with an empty key set pass through a layer unchanged.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from uvsplat.errors import ValidationError


@dataclass
class FeatureMap:
    data: np.ndarray      # (K_i, K_i, C), zero on invalid texels
    valid: np.ndarray     # (K_i, K_i) bool
    scale_index: int = 0  # 0 = finest

    @property
    def k(self):
        return self.data.shape[0]

    @property
    def channels(self):
        return self.data.shape[2]

    def masked(self):
        out = self.data.copy()
        out[~self.valid] = 0.0
        return FeatureMap(out, self.valid.copy(), self.scale_index)


@dataclass
class MaskMap:
    values: np.ndarray    # (K_i, K_i) in [0, 1]

    @property
    def k(self):
        return self.values.shape[0]


@dataclass
class AttentionConfig:
    window: int = 7
    layers: int = 2
    seed: int = 0
    value_identity: bool = False


def visibility_mask(p_r, valid, verts, triangles, cam, tau):
    """Per-texel source-view visibility against a mesh depth buffer.

    The buffer is rasterized at camera resolution with screen-space
    barycentric z interpolation, nearest depth wins; a texel is visible iff
    its projection lands in-frame and its depth is within ``tau`` of the
    buffer. Returns a binary MaskMap (zero on invalid texels).
    """
    zbuf = rasterize_depth(verts, triangles, cam)
    mask = np.zeros(p_r.shape[:2])
    pts = p_r[valid]
    x_cam = pts @ cam.R.T + cam.t
    z = x_cam[:, 2]
    ok = z > 1e-9
    px = np.full(len(pts), -1.0)
    py = np.full(len(pts), -1.0)
    px[ok] = cam.fx * x_cam[ok, 0] / z[ok] + cam.cx
    py[ok] = cam.fy * x_cam[ok, 1] / z[ok] + cam.cy
    ix = np.floor(px).astype(np.int64)
    iy = np.floor(py).astype(np.int64)
    inframe = ok & (ix >= 0) & (ix < cam.width) & (iy >= 0) & (iy < cam.height)
    vis = np.zeros(len(pts), dtype=bool)
    idx = np.nonzero(inframe)[0]
    vis[idx] = z[idx] <= zbuf[iy[idx], ix[idx]] + tau
    mask[valid] = vis.astype(np.float64)
    return MaskMap(values=mask)


def rasterize_depth(verts, triangles, cam):
    """Z-buffer of the mesh at camera resolution (inf where empty)."""
    x_cam = verts @ cam.R.T + cam.t
    z = x_cam[:, 2]
    zbuf = np.full((cam.height, cam.width), np.inf)
    tri_z = z[triangles]
    front = np.all(tri_z > 1e-6, axis=1)
    px = cam.fx * x_cam[:, 0] / np.where(np.abs(z) > 1e-12, z, 1.0) + cam.cx
    py = cam.fy * x_cam[:, 1] / np.where(np.abs(z) > 1e-12, z, 1.0) + cam.cy
    for f in np.nonzero(front)[0]:
        tri = triangles[f]
        xs, ys, zs = px[tri], py[tri], tri_z[f]
        x0 = max(int(np.floor(xs.min() - 0.5)), 0)
        x1 = min(int(np.ceil(xs.max() - 0.5)), cam.width - 1)
        y0 = max(int(np.floor(ys.min() - 0.5)), 0)
        y1 = min(int(np.ceil(ys.max() - 0.5)), cam.height - 1)
        if x1 < x0 or y1 < y0:
            continue
        det = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0])
        if abs(det) < 1e-12:
            continue
        gx = np.arange(x0, x1 + 1) + 0.5
        gy = np.arange(y0, y1 + 1) + 0.5
        dx = gx[None, :] - xs[0]
        dy = gy[:, None] - ys[0]
        b1 = ((ys[2] - ys[0]) * dx - (xs[2] - xs[0]) * dy) / det
        b2 = (-(ys[1] - ys[0]) * dx + (xs[1] - xs[0]) * dy) / det
        b0 = 1.0 - b1 - b2
        inside = (b0 >= -1e-12) & (b1 >= -1e-12) & (b2 >= -1e-12)
        if not inside.any():
            continue
        zi = b0 * zs[0] + b1 * zs[1] + b2 * zs[2]
        patch = zbuf[y0:y1 + 1, x0:x1 + 1]
        np.minimum(patch, np.where(inside, zi, np.inf), out=patch)
    return zbuf


def sample_local_features(source_image, p_r, valid, cam, vis):
    """Project refined texel positions into the source view and bilinearly
    sample its features; zero (and invalid) where unseen."""
    h, w = source_image.shape[:2]
    c = source_image.shape[2]
    k = p_r.shape[0]
    data = np.zeros((k, k, c))
    eligible = valid & (vis.values > 0.5)
    pts = p_r[eligible]
    x_cam = pts @ cam.R.T + cam.t
    z = np.maximum(x_cam[:, 2], 1e-12)
    px = cam.fx * x_cam[:, 0] / z + cam.cx - 0.5
    py = cam.fy * x_cam[:, 1] / z + cam.cy - 0.5
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    fx = px - x0
    fy = py - y0
    val = np.zeros((len(pts), c))
    inb = np.ones(len(pts), dtype=bool)
    for dx, dy, wgt in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                        (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        xs = np.clip(x0 + dx, 0, w - 1)
        ys = np.clip(y0 + dy, 0, h - 1)
        ok = (x0 + dx >= 0) & (x0 + dx < w) & (y0 + dy >= 0) & (y0 + dy < h)
        inb &= ok | (wgt < 1e-12)
        val += np.where(ok, wgt, 0.0)[:, None] * source_image[ys, xs]
    val[~inb] = 0.0
    data[eligible] = val
    fm_valid = np.zeros((k, k), dtype=bool)
    el_idx = np.nonzero(eligible)
    fm_valid[el_idx[0][inb], el_idx[1][inb]] = True
    return FeatureMap(data=data, valid=fm_valid, scale_index=0)


def _pool_pair(data, weight):
    """2x validity-weighted average pooling; weight 0 marks missing."""
    k = data.shape[0]
    d = data.reshape(k // 2, 2, k // 2, 2, -1)
    w = weight.reshape(k // 2, 2, k // 2, 2)
    wsum = w.sum(axis=(1, 3))
    pooled = (d * w[..., None]).sum(axis=(1, 3)) / np.maximum(wsum, 1e-12)[..., None]
    pooled[wsum <= 0] = 0.0
    return pooled, wsum


def build_pyramid(fm, n_scales):
    """Finest-first list of validity-weighted 2x average-pooled maps.

    ``fm.k`` must be divisible by 2**(n_scales-1); scale_index counts down
    from the input's so the coarsest level has the smallest index.
    """
    if n_scales < 1:
        raise ValidationError("pyramid wants at least one scale")
    if fm.k % (2 ** (n_scales - 1)) != 0:
        raise ValidationError(
            f"map size {fm.k} not divisible by 2^{n_scales - 1}")
    levels = [FeatureMap(fm.data.copy(), fm.valid.copy(), n_scales - 1)]
    for i in range(1, n_scales):
        prev = levels[-1]
        pooled, wsum = _pool_pair(prev.data, prev.valid.astype(np.float64))
        levels.append(FeatureMap(data=pooled, valid=wsum > 0,
                                 scale_index=n_scales - 1 - i))
    return levels


def pool_mask(mask, valid):
    """Pool a mask (values averaged over valid children) one level down."""
    pooled, wsum = _pool_pair(mask.values[..., None], valid.astype(np.float64))
    return MaskMap(values=pooled[..., 0])


def mirror_indices(atlas):
    """(rows, cols) of each texel's mirror at full resolution, -1 unmapped."""
    k = atlas.k
    flat = atlas.mirror
    rows = np.where(flat >= 0, flat // k, -1)
    cols = np.where(flat >= 0, flat % k, -1)
    return rows.astype(np.int64), cols.astype(np.int64)


def pool_mirror(rows, cols, valid_coarse):
    """Derive the coarse mirror map from the children's (first valid child,
    halved); undefined where no child maps or the target is invalid."""
    k = rows.shape[0]
    kk = k // 2
    out_r = np.full((kk, kk), -1, dtype=np.int64)
    out_c = np.full((kk, kk), -1, dtype=np.int64)
    rr = rows.reshape(kk, 2, kk, 2).transpose(0, 2, 1, 3).reshape(kk, kk, 4)
    cc = cols.reshape(kk, 2, kk, 2).transpose(0, 2, 1, 3).reshape(kk, kk, 4)
    has = rr >= 0
    first = np.argmax(has, axis=2)
    any_has = has.any(axis=2)
    ii, jj = np.nonzero(any_has)
    pick = first[ii, jj]
    tr = rr[ii, jj, pick] // 2
    tc = cc[ii, jj, pick] // 2
    ok = valid_coarse[tr, tc]
    out_r[ii[ok], jj[ok]] = tr[ok]
    out_c[ii[ok], jj[ok]] = tc[ok]
    return out_r, out_c


def _orthonormal(rng, rows, cols):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, _ = np.linalg.qr(a)
    return q[:rows, :cols] if rows >= cols else q[:cols, :rows].T


def _layer_weights(rng, channels, value_identity):
    wq = _orthonormal(rng, channels, channels)
    wk = _orthonormal(rng, channels, channels)
    wv = np.eye(channels) if value_identity else _orthonormal(rng, channels, channels)
    w1 = _orthonormal(rng, 2 * channels, channels)
    w2 = _orthonormal(rng, channels, 2 * channels)
    return wq, wk, wv, w1, w2


def symmetric_window_attention(f_g, f_l, mirror_rc, config):
    """Windowed cross-attention from the global map into the local map plus
    its mirrored window, with residual and a two-layer feedforward."""
    if config.window % 2 == 0:
        raise ValidationError(f"window must be odd, got {config.window}")
    if f_g.data.shape != f_l.data.shape:
        raise ValidationError("global/local feature shapes differ")
    k = f_g.k
    c = f_g.channels
    mr, mc = mirror_rc
    half = config.window // 2
    offsets = [(di, dj) for di in range(-half, half + 1)
               for dj in range(-half, half + 1)]
    rng = np.random.default_rng(config.seed)

    cur = f_g.data.copy()
    cur[~f_g.valid] = 0.0
    rows_base = np.arange(k)[:, None] * np.ones(k, dtype=np.int64)[None, :]
    cols_base = np.ones(k, dtype=np.int64)[:, None] * np.arange(k)[None, :]
    key_eligible = f_l.valid

    for _ in range(config.layers):
        wq, wk, wv, w1, w2 = _layer_weights(rng, c, config.value_identity)
        k_all = f_l.data @ wk.T
        v_all = f_l.data @ wv.T
        q_all = cur @ wq.T

        attn_out = np.zeros_like(cur)
        any_key = np.zeros((k, k), dtype=bool)
        chunk = max(1, int(2 ** 21 // max(1, 2 * len(offsets) * k * c)))
        for r0 in range(0, k, chunk):
            r1 = min(k, r0 + chunk)
            n_r = r1 - r0
            logits = np.full((2 * len(offsets), n_r, k), -np.inf)
            vals = np.zeros((2 * len(offsets), n_r, k, c))
            q_chunk = q_all[r0:r1]
            for o, (di, dj) in enumerate(offsets):
                for half_idx, (br, bc) in enumerate(
                        ((rows_base[r0:r1], cols_base[r0:r1]),
                         (mr[r0:r1], mc[r0:r1]))):
                    rr = br + di
                    cc = bc + dj
                    ok = (br >= 0) & (rr >= 0) & (rr < k) & (cc >= 0) & (cc < k)
                    rr_c = np.clip(rr, 0, k - 1)
                    cc_c = np.clip(cc, 0, k - 1)
                    ok &= key_eligible[rr_c, cc_c]
                    slot = o + half_idx * len(offsets)
                    lg = np.einsum("rkc,rkc->rk", q_chunk, k_all[rr_c, cc_c])
                    logits[slot] = np.where(ok, lg / np.sqrt(c), -np.inf)
                    vals[slot] = np.where(ok[..., None], v_all[rr_c, cc_c], 0.0)
            has_key = np.isfinite(logits).any(axis=0)
            any_key[r0:r1] = has_key
            peak = np.max(logits, axis=0, where=np.isfinite(logits), initial=-1e30)
            ex = np.exp(np.where(np.isfinite(logits), logits - peak, -np.inf))
            ex = np.where(np.isfinite(logits), ex, 0.0)
            denom = np.maximum(ex.sum(axis=0), 1e-300)
            attn_out[r0:r1] = np.einsum("ork,orkc->rkc", ex / denom, vals)

        active = f_g.valid & any_key
        nxt = cur.copy()
        res = cur + attn_out
        hidden = np.maximum(res @ w1.T, 0.0)
        ff = res + hidden @ w2.T
        nxt[active] = ff[active]
        cur = nxt

    cur[~f_g.valid] = 0.0
    return FeatureMap(data=cur, valid=f_g.valid.copy(),
                      scale_index=f_g.scale_index)


def occlusion_mask(f_c, f_l, theta_occ):
    """Binary mask of texels whose local feature agrees with the fused one
    (cosine similarity >= threshold); zero-norm features score 0."""
    if f_c.data.shape != f_l.data.shape:
        raise ValidationError("occlusion mask wants equal feature shapes")
    dot = np.einsum("ijc,ijc->ij", f_c.data, f_l.data)
    na = np.linalg.norm(f_c.data, axis=2)
    nb = np.linalg.norm(f_l.data, axis=2)
    cos = np.where((na > 0) & (nb > 0), dot / np.maximum(na * nb, 1e-300), 0.0)
    values = ((cos >= theta_occ) & f_l.valid).astype(np.float64)
    return MaskMap(values=values)


def symmetric_completion(f_l, m_v, m_o, mirror_rc, valid):
    """Occlusion-masked local features completed from the mirrored side:
    ``F_m = M_o*F_l + flip(M_o*F_l) * (1 - M_v*M_o)``; texels without a
    mirror take only the first term."""
    mr, mc = mirror_rc
    f_lm = m_o.values[..., None] * f_l.data
    flip = np.zeros_like(f_lm)
    has = mr >= 0
    flip[has] = f_lm[mr[has], mc[has]]
    gate = 1.0 - m_v.values * m_o.values
    data = f_lm + flip * gate[..., None]
    data[~valid] = 0.0
    return FeatureMap(data=data, valid=valid.copy(), scale_index=f_l.scale_index)


def fuse_conv(f_c, f_m, seed):
    """Seeded fixed 1x1 convolution over the concatenated maps, plus a
    residual of the attention output."""
    if f_c.data.shape != f_m.data.shape:
        raise ValidationError("fuse_conv wants equal feature shapes")
    c = f_c.channels
    rng = np.random.default_rng(seed)
    w = _orthonormal(rng, c, 2 * c)
    cat = np.concatenate([f_c.data, f_m.data], axis=2)
    data = cat @ w.T + f_c.data
    data[~f_c.valid] = 0.0
    return FeatureMap(data=data, valid=f_c.valid.copy(),
                      scale_index=f_c.scale_index)


@dataclass
class FusionLevel:
    f_g: FeatureMap
    f_l: FeatureMap
    m_v: MaskMap
    f_c: FeatureMap
    m_o: MaskMap
    f_m: FeatureMap
    f_f: FeatureMap
    mirror_rc: tuple = field(default=None, repr=False)


def fuse_stack(f_g, f_l, m_v, atlas, n_scales=4, window=7, layers=2,
               theta_occ=0.5, seed=0, value_identity=False):
    """Run the full fusion pipeline across ``n_scales`` levels; returns the
    finest-first list of FusionLevel intermediates."""
    if f_g.k != atlas.k or f_l.k != atlas.k:
        raise ValidationError("feature maps must match the atlas resolution")
    g_levels = build_pyramid(f_g, n_scales)
    l_levels = build_pyramid(f_l, n_scales)
    mirror_rc = mirror_indices(atlas)
    valid_levels = [atlas.valid.copy()]
    mv_levels = [MaskMap(values=m_v.values * atlas.valid)]
    mirror_levels = [mirror_rc]
    for i in range(1, n_scales):
        mv_levels.append(pool_mask(mv_levels[-1], valid_levels[-1]))
        coarse_valid = _pool_valid(valid_levels[-1])
        mirror_levels.append(pool_mirror(*mirror_levels[-1], coarse_valid))
        valid_levels.append(coarse_valid)

    out = []
    for i in range(n_scales):
        cfg = AttentionConfig(window=window, layers=layers, seed=seed + i,
                              value_identity=value_identity)
        f_c = symmetric_window_attention(g_levels[i], l_levels[i],
                                         mirror_levels[i], cfg)
        m_o = occlusion_mask(f_c, l_levels[i], theta_occ)
        f_m = symmetric_completion(l_levels[i], mv_levels[i], m_o,
                                   mirror_levels[i], g_levels[i].valid)
        f_f = fuse_conv(f_c, f_m, seed=seed + 101 + i)
        out.append(FusionLevel(f_g=g_levels[i], f_l=l_levels[i],
                               m_v=mv_levels[i], f_c=f_c, m_o=m_o, f_m=f_m,
                               f_f=f_f, mirror_rc=mirror_levels[i]))
    return out


def _pool_valid(valid):
    k = valid.shape[0]
    return valid.reshape(k // 2, 2, k // 2, 2).any(axis=(1, 3))


def synthesize_global_features(atlas, channels, seed=0):
    """Procedural stand-in for learned global features: seeded smooth
    sinusoid mixtures over UV, zeroed on invalid texels."""
    rng = np.random.default_rng(seed)
    centers = atlas.texel_centers()
    u, v = centers[..., 0], centers[..., 1]
    data = np.zeros((atlas.k, atlas.k, channels))
    for c in range(channels):
        fu, fv = rng.integers(1, 5, size=2)
        ph = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.5, 1.0)
        data[..., c] = amp * np.sin(2 * np.pi * (fu * u + fv * v) + ph)
    data[~atlas.valid] = 0.0
    return FeatureMap(data=data, valid=atlas.valid.copy(),
                      scale_index=0)
