"""Procedural head asset: ellipsoidal cranium with nose/jaw/brow bulges and
eye sockets, a lat-long UV layout, compact-support expression blendshapes and
a single root joint at the origin.

Everything is mirror-symmetric in x <-> (1-u) so the UV mirror involution and
the symmetric-fusion tests hold exactly. The lat-long layout covers the whole
UV square, which keeps every texel valid; the small openings at the poles sit
under the hair and below the neck.
"""

import numpy as np

from uvsplat.geometry.mesh import HeadMesh

LAT_MAX = 1.4835  # +-85 degrees; open poles avoid degenerate triangles
_RADII = np.array([0.42, 0.55, 0.45])  # x (ear-to-ear), y (vertical), z (front-back)

_HAIR_CAP_LAT = 1.08
_HAIR_BACK_PHI = 2.72
_HAIR_BACK_LAT_MIN = -0.3


def _angles(u, v):
    phi = (np.asarray(u) - 0.5) * 2.0 * np.pi
    lat = (np.asarray(v) - 0.5) * 2.0 * LAT_MAX
    return phi, lat


def _bump(x, center, width):
    return np.exp(-((x - center) / width) ** 2)


def _radial_profile(phi, lat, seed):
    """Even-in-phi radial multiplier field: facial features plus a tiny
    seeded variation so different seeds give different heads."""
    r = np.ones_like(phi)
    r += 0.16 * _bump(phi, 0.0, 0.28) * _bump(lat, 0.02, 0.16)       # nose
    r += 0.07 * _bump(phi, 0.0, 0.75) * _bump(lat, -0.55, 0.22)      # jaw
    r += 0.04 * _bump(phi, 0.0, 0.70) * _bump(lat, 0.45, 0.12)       # brow
    r -= 0.06 * _bump(np.abs(phi), 0.42, 0.15) * _bump(lat, 0.28, 0.11)  # sockets
    rng = np.random.default_rng(seed)
    for _ in range(3):
        amp = rng.uniform(0.004, 0.012)
        m = rng.integers(1, 4)
        n = rng.integers(1, 4)
        pa, pb = rng.uniform(0, np.pi, size=2)
        r += amp * np.cos(m * np.abs(phi) + pa) * np.cos(n * lat + pb)
    return r


def _surface(u, v, seed):
    phi, lat = _angles(u, v)
    direction = np.stack([
        _RADII[0] * np.cos(lat) * np.sin(phi),
        _RADII[1] * np.sin(lat),
        _RADII[2] * np.cos(lat) * np.cos(phi),
    ], axis=-1)
    return direction * _radial_profile(phi, lat, seed)[..., None]


def _compact(x, center, half_width):
    t = np.clip(1.0 - ((x - center) / half_width) ** 2, 0.0, None)
    return t * t


def _region_for(phi, lat):
    if lat > _HAIR_CAP_LAT:
        return "hair"
    if abs(phi) > _HAIR_BACK_PHI and lat > _HAIR_BACK_LAT_MIN:
        return "hair"
    if 0.20 < phi < 0.75 and 0.08 < lat < 0.45:
        return "left_eye"
    if -0.75 < phi < -0.20 and 0.08 < lat < 0.45:
        return "right_eye"
    if abs(phi) < 0.25 and -0.42 < lat < -0.28:
        return "mouth_interior_cover"
    return "face"


def make_head_mesh(seed=0, n_long=64, n_lat=32):
    """Build the procedural head. ``n_long`` x ``n_lat`` quad grid, two
    triangles per quad, wedge UVs on the exact lat-long grid."""
    us = np.arange(n_long + 1) / n_long
    vs = np.arange(n_lat + 1) / n_lat
    uu, vv = np.meshgrid(us, vs, indexing="xy")          # (n_lat+1, n_long+1)
    verts = _surface(uu, vv, seed).reshape(-1, 3)

    def vid(i, j):
        return j * (n_long + 1) + i

    tris, uvw, labels = [], [], []
    for j in range(n_lat):
        for i in range(n_long):
            q = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
            # diagonal flips across the u = 0.5 line so the layout mirrors onto itself
            if i < n_long // 2:
                quad_tris = [(q[0], q[1], q[2]), (q[0], q[2], q[3])]
            else:
                quad_tris = [(q[0], q[1], q[3]), (q[1], q[2], q[3])]
            phi_c, lat_c = _angles((i + 0.5) / n_long, (j + 0.5) / n_lat)
            tag = _region_for(float(phi_c), float(lat_c))
            for tri in quad_tris:
                tris.append([vid(a, b) for a, b in tri])
                uvw.append([[us[a], vs[b]] for a, b in tri])
                labels.append(tag)

    n_verts = verts.shape[0]
    uu_f, vv_f = uu.reshape(-1), vv.reshape(-1)
    phi, lat = _angles(uu_f, vv_f)

    radial = verts / np.linalg.norm(verts, axis=1, keepdims=True)
    shape_basis = np.stack([
        0.08 * radial,                                         # overall size
        np.stack([np.zeros(n_verts), 0.1 * verts[:, 1], np.zeros(n_verts)], axis=1),
    ], axis=2)

    jaw = _compact(lat, -0.75, 0.55) * _compact(phi, 0.0, 1.1)
    brow = _compact(lat, 0.45, 0.25) * _compact(phi, 0.0, 0.9)
    expr_basis = np.stack([
        jaw[:, None] * np.array([0.0, -0.07, 0.015]),
        brow[:, None] * np.array([0.0, 0.03, 0.0]),
    ], axis=2)

    mesh = HeadMesh(
        vertices=verts,
        triangles=np.asarray(tris, dtype=np.int32),
        uv_corners=np.asarray(uvw, dtype=np.float64),
        shape_basis=shape_basis,
        pose_basis=np.zeros((n_verts, 3, 0)),
        expr_basis=expr_basis,
        skin_weights=np.ones((n_verts, 1)),
        joint_regressor=np.zeros((1, n_verts)),
        joint_parents=np.array([-1], dtype=np.int64),
        region_labels=np.asarray(labels, dtype="<U32"),
        mirror_symmetric=True,
        name=f"prochead{seed}",
    )
    return mesh.validate()


def head_texture(u, v, seed=0):
    """Deterministic smooth texture over UV; returns (..., 3) in [0.05, 0.95]."""
    rng = np.random.default_rng(seed + 7919)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    base = np.array([0.72, 0.55, 0.45])
    rgb = np.broadcast_to(base, u.shape + (3,)).copy()
    for c in range(3):
        for _ in range(3):
            amp = rng.uniform(0.06, 0.16)
            fu, fv = rng.integers(1, 6, size=2)
            ph = rng.uniform(0, 2 * np.pi)
            rgb[..., c] += amp * np.sin(2 * np.pi * (fu * u + fv * v) + ph)
    return np.clip(rgb, 0.05, 0.95)
