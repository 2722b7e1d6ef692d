"""UV atlas: per-texel triangle binding, barycentrics, mirror map and the
relative scale map that compensates UV distortion.

Maps are indexed ``[row, col]`` with ``u = (col + 0.5) / K`` and
``v = (row + 0.5) / K``; a texel is valid iff its center lies inside a UV
triangle. The relative scale is ``sqrt(area3d / area_uv)`` of the texel's
triangle, constant per triangle, so isotropic Gaussian footprints scale with
3D edge length.
"""

from dataclasses import dataclass
from typing import Dict

import numpy as np

from uvsplat.errors import ValidationError
from uvsplat.quat import rot_to_quat

DEGENERATE_AREA = 1e-12
_EDGE_EPS = 1e-12       # inclusive point-in-triangle slack
_INTERIOR_EPS = 1e-9    # a texel claimed this far inside two triangles is an overlap


@dataclass
class UvAtlas:
    k: int
    tri_index: np.ndarray       # (K, K) int32, -1 invalid
    bary: np.ndarray            # (K, K, 3)
    valid: np.ndarray           # (K, K) bool
    mirror: np.ndarray          # (K, K) int32 flat texel index, -1 unmapped
    rel_scale: np.ndarray       # (K, K)
    region_masks: Dict[str, np.ndarray]
    triangles: np.ndarray       # (F, 3) vertex indices (copy of the mesh's)
    uv_corners: np.ndarray      # (F, 3, 2)

    @property
    def texel_u(self):
        return (np.arange(self.k) + 0.5) / self.k

    def texel_centers(self):
        """(K, K, 2) array of (u, v) texel centers."""
        c = self.texel_u
        u, v = np.meshgrid(c, c, indexing="xy")
        return np.stack([u, v], axis=-1)


def build_uv_atlas(mesh, k):
    """Rasterize the UV layout into a K x K atlas.

    Raises on overlapping UV triangles (two triangles both strictly
    containing one texel center); shared edges tie-break to the lower
    triangle index.
    """
    if k < 4:
        raise ValidationError(f"atlas resolution {k} < 4")
    mesh.validate()

    uv = mesh.uv_corners
    tri_index = np.full((k, k), -1, dtype=np.int32)
    bary = np.zeros((k, k, 3))
    centers = (np.arange(k) + 0.5) / k

    for f in range(mesh.n_triangles):
        a, b, c = uv[f]
        lo = np.minimum(np.minimum(a, b), c)
        hi = np.maximum(np.maximum(a, b), c)
        c0 = max(int(np.floor(lo[0] * k - 0.5)), 0)
        c1 = min(int(np.ceil(hi[0] * k - 0.5)), k - 1)
        r0 = max(int(np.floor(lo[1] * k - 0.5)), 0)
        r1 = min(int(np.ceil(hi[1] * k - 0.5)), k - 1)
        if c1 < c0 or r1 < r0:
            continue
        us = centers[c0:c1 + 1]
        vs = centers[r0:r1 + 1]
        # affine inverse of the UV triangle around corner a
        m = np.array([[b[0] - a[0], c[0] - a[0]],
                      [b[1] - a[1], c[1] - a[1]]])
        minv = np.linalg.inv(m)
        du = us[None, :] - a[0]
        dv = vs[:, None] - a[1]
        b1 = minv[0, 0] * du + minv[0, 1] * dv
        b2 = minv[1, 0] * du + minv[1, 1] * dv
        b0 = 1.0 - b1 - b2
        inside = (b0 >= -_EDGE_EPS) & (b1 >= -_EDGE_EPS) & (b2 >= -_EDGE_EPS)
        if not inside.any():
            continue
        rows, cols = np.nonzero(inside)
        rows = rows + r0
        cols = cols + c0
        new_bary = np.stack([b0[inside], b1[inside], b2[inside]], axis=-1)
        taken = tri_index[rows, cols] >= 0
        if taken.any():
            old_min = bary[rows[taken], cols[taken]].min(axis=-1)
            new_min = new_bary[taken].min(axis=-1)
            clash = (old_min > _INTERIOR_EPS) & (new_min > _INTERIOR_EPS)
            if clash.any():
                other = int(tri_index[rows[taken][clash][0], cols[taken][clash][0]])
                raise ValidationError(
                    f"UV triangles {other} and {f} overlap in the atlas")
        free = ~taken
        tri_index[rows[free], cols[free]] = f
        bary[rows[free], cols[free]] = new_bary[free]

    valid = tri_index >= 0
    if not valid.any():
        raise ValidationError("UV layout covers no texel centers")

    v3 = mesh.vertices[mesh.triangles]
    area3 = 0.5 * np.linalg.norm(
        np.cross(v3[:, 1] - v3[:, 0], v3[:, 2] - v3[:, 0]), axis=1)
    e1 = uv[:, 1] - uv[:, 0]
    e2 = uv[:, 2] - uv[:, 0]
    area_uv = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    tri_scale = np.sqrt(area3 / area_uv)
    rel_scale = np.zeros((k, k))
    rel_scale[valid] = tri_scale[tri_index[valid]]

    mirror = np.full((k, k), -1, dtype=np.int32)
    if mesh.mirror_symmetric:
        cols = np.arange(k)
        mcols = k - 1 - cols
        both = valid & valid[:, mcols]
        rows = np.arange(k)[:, None]
        flat = rows * k + mcols[None, :]
        mirror[both] = flat[both]

    region_masks = {}
    for tag in np.unique(mesh.region_labels):
        tri_has = mesh.region_labels == tag
        mask = np.zeros((k, k), dtype=bool)
        mask[valid] = tri_has[tri_index[valid]]
        region_masks[str(tag)] = mask

    return UvAtlas(k=k, tri_index=tri_index, bary=bary, valid=valid,
                   mirror=mirror, rel_scale=rel_scale,
                   region_masks=region_masks,
                   triangles=mesh.triangles.copy(),
                   uv_corners=uv.copy())


def position_map(atlas, verts):
    """Barycentric surface positions per valid texel, zero elsewhere."""
    p = np.zeros((atlas.k, atlas.k, 3))
    tri = atlas.tri_index[atlas.valid]
    corners = verts[atlas.triangles[tri]]            # (n, 3, 3)
    p[atlas.valid] = np.einsum("ni,nij->nj", atlas.bary[atlas.valid], corners)
    return p


def triangle_frames(atlas, verts):
    """Per-triangle orthonormal right-handed (T, B, N) bases as columns.

    Returns (F, 3, 3) frames, (F, 4) quaternions, (F,) validity. Degenerate
    3D triangles (area < 1e-12) fall back to the identity frame.
    """
    tris = atlas.triangles
    uv = atlas.uv_corners
    v = verts[tris]
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    n_raw = np.cross(e1, e2)
    n_len = np.linalg.norm(n_raw, axis=1)
    ok = 0.5 * n_len > DEGENERATE_AREA

    frames = np.tile(np.eye(3), (tris.shape[0], 1, 1))
    if ok.any():
        n = n_raw[ok] / n_len[ok, None]
        duv1 = uv[ok, 1] - uv[ok, 0]
        duv2 = uv[ok, 2] - uv[ok, 0]
        det = duv1[:, 0] * duv2[:, 1] - duv2[:, 0] * duv1[:, 1]
        t_raw = (duv2[:, 1, None] * e1[ok] - duv1[:, 1, None] * e2[ok]) / det[:, None]
        t_raw = t_raw - np.sum(t_raw * n, axis=1, keepdims=True) * n
        t_len = np.linalg.norm(t_raw, axis=1)
        degen_t = t_len < 1e-12
        t = np.where(degen_t[:, None], _any_perpendicular(n), t_raw / np.maximum(t_len, 1e-300)[:, None])
        b = np.cross(n, t)
        frames[ok] = np.stack([t, b, n], axis=-1)
    quats = rot_to_quat(frames)
    return frames, quats, ok


def _any_perpendicular(n):
    helper = np.where(np.abs(n[:, :1]) < 0.9,
                      np.array([[1.0, 0.0, 0.0]]),
                      np.array([[0.0, 1.0, 0.0]]))
    t = np.cross(helper, n)
    return t / np.linalg.norm(t, axis=1, keepdims=True)


def tangent_frames(atlas, verts):
    """Per-texel tangent frames; returns (K,K,3,3) frames and (K,K) validity
    (False where the texel is invalid or its triangle is degenerate)."""
    frames_f, _, ok_f = triangle_frames(atlas, verts)
    frames = np.tile(np.eye(3), (atlas.k, atlas.k, 1, 1))
    good = np.zeros((atlas.k, atlas.k), dtype=bool)
    tri = atlas.tri_index[atlas.valid]
    frames[atlas.valid] = frames_f[tri]
    good[atlas.valid] = ok_f[tri]
    return frames, good


def region_mask(atlas, name):
    """Texel mask of a named region; unknown tags raise."""
    if name not in atlas.region_masks:
        known = ", ".join(sorted(atlas.region_masks))
        raise ValidationError(f"unknown region '{name}' (have: {known})")
    return atlas.region_masks[name]
