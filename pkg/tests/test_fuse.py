import numpy as np
import pytest

from uvsplat.errors import ValidationError
from uvsplat.fuse import (
    AttentionConfig,
    FeatureMap,
    MaskMap,
    build_pyramid,
    fuse_conv,
    fuse_stack,
    mirror_indices,
    occlusion_mask,
    sample_local_features,
    symmetric_completion,
    symmetric_window_attention,
    synthesize_global_features,
    visibility_mask,
)
from uvsplat.geometry.atlas import build_uv_atlas, position_map
from uvsplat.geometry.mesh import HeadMesh
from uvsplat.splat import Camera

from oracles import ray_visibility_oracle


def _quad_pair_mesh():
    """Front quad at z=1 and a parallel quad at z=2, each its own UV island."""
    vertices = np.array([
        [-1.0, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
        [-1.0, -1, 2], [1, -1, 2], [1, 1, 2], [-1, 1, 2],
    ])
    triangles = np.array([[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]],
                         dtype=np.int32)
    uv = {
        0: [[0.02, 0.1], [0.46, 0.1], [0.46, 0.9]],
        1: [[0.02, 0.1], [0.46, 0.9], [0.02, 0.9]],
        2: [[0.54, 0.1], [0.98, 0.1], [0.98, 0.9]],
        3: [[0.54, 0.1], [0.98, 0.9], [0.54, 0.9]],
    }
    uv_corners = np.array([uv[i] for i in range(4)])
    v = 8
    return HeadMesh(
        vertices=vertices, triangles=triangles, uv_corners=uv_corners,
        shape_basis=np.zeros((v, 3, 0)), pose_basis=np.zeros((v, 3, 0)),
        expr_basis=np.zeros((v, 3, 0)), skin_weights=np.ones((v, 1)),
        joint_regressor=np.zeros((1, v)), joint_parents=np.array([-1]),
        region_labels=np.array(["face"] * 4, dtype="<U32"),
        name="quadpair").validate()


def _front_cam(width=64, height=64, f=40.0):
    return Camera(fx=f, fy=f, cx=width / 2, cy=height / 2, R=np.eye(3),
                  t=np.zeros(3), width=width, height=height).validate()


def test_visibility_single_quad_all_visible():
    mesh = _quad_pair_mesh()
    # drop the far quad so only the front one exists
    mesh2 = HeadMesh(**{**mesh.__dict__,
                        "triangles": mesh.triangles[:2],
                        "uv_corners": mesh.uv_corners[:2],
                        "region_labels": mesh.region_labels[:2]})
    atlas = build_uv_atlas(mesh2, 32)
    p = position_map(atlas, mesh2.vertices)
    mask = visibility_mask(p, atlas.valid, mesh2.vertices, mesh2.triangles,
                           _front_cam(), tau=0.01)
    assert np.all(mask.values[atlas.valid] == 1.0)
    assert np.all(mask.values[~atlas.valid] == 0.0)


def test_visibility_occluded_far_quad():
    mesh = _quad_pair_mesh()
    atlas = build_uv_atlas(mesh, 32)
    p = position_map(atlas, mesh.vertices)
    mask = visibility_mask(p, atlas.valid, mesh.vertices, mesh.triangles,
                           _front_cam(), tau=0.01)
    near = atlas.valid & (atlas.tri_index < 2)
    far = atlas.valid & (atlas.tri_index >= 2)
    assert np.all(mask.values[near] == 1.0)
    assert np.all(mask.values[far] == 0.0)


def test_visibility_camera_behind_geometry_all_zero():
    mesh = _quad_pair_mesh()
    atlas = build_uv_atlas(mesh, 16)
    p = position_map(atlas, mesh.vertices)
    cam = Camera(fx=40, fy=40, cx=16, cy=16, R=np.eye(3),
                 t=np.array([0.0, 0, -5.0]), width=32, height=32).validate()
    cam2 = Camera(fx=40, fy=40, cx=16, cy=16, R=np.eye(3),
                  t=np.array([0.0, 0, 5.0]), width=32, height=32).validate()
    mask = visibility_mask(p, atlas.valid, mesh.vertices, mesh.triangles,
                           cam2, tau=0.01)
    assert np.all(mask.values == 0.0)


def test_visibility_matches_ray_oracle_on_head(head_mesh, head_atlas_32):
    atlas = head_atlas_32
    p = position_map(atlas, head_mesh.vertices)
    cam = Camera.orbit(20, 10, 2.6, fov_deg=40.0, width=128, height=128)
    tau = 0.01
    mask = visibility_mask(p, atlas.valid, head_mesh.vertices,
                           head_mesh.triangles, cam, tau)
    oracle = ray_visibility_oracle(p, atlas.valid, head_mesh.vertices,
                                   head_mesh.triangles, cam, tau)
    agree = (mask.values == oracle)[atlas.valid].mean()
    assert agree >= 0.995


def test_sample_local_constant_image(head_mesh, head_atlas_32):
    atlas = head_atlas_32
    p = position_map(atlas, head_mesh.vertices)
    cam = Camera.orbit(0, 5, 2.6, width=64, height=64)
    vis = visibility_mask(p, atlas.valid, head_mesh.vertices,
                          head_mesh.triangles, cam, 0.01)
    img = np.full((64, 64, 3), 0.7)
    fl = sample_local_features(img, p, atlas.valid, cam, vis)
    visible = fl.valid
    assert visible.any()
    assert np.allclose(fl.data[visible], 0.7)
    assert np.all(fl.data[~visible] == 0.0)

    zero_vis = MaskMap(values=np.zeros_like(vis.values))
    fl0 = sample_local_features(img, p, atlas.valid, cam, zero_vis)
    assert np.all(fl0.data == 0.0)
    assert not fl0.valid.any()


def test_sample_local_bilinear_oracle(quad_mesh):
    atlas = build_uv_atlas(quad_mesh, 16)
    verts = quad_mesh.vertices + np.array([-0.5, -0.5, 1.5])
    p = position_map(atlas, verts)
    cam = _front_cam(width=32, height=32, f=30.0)
    vis = MaskMap(values=atlas.valid.astype(np.float64))
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (32, 32, 2))
    fl = sample_local_features(img, p, atlas.valid, cam, vis)
    idx = np.argwhere(fl.valid)
    for r, c in idx[::17]:
        x_cam = p[r, c]
        px = cam.fx * x_cam[0] / x_cam[2] + cam.cx - 0.5
        py = cam.fy * x_cam[1] / x_cam[2] + cam.cy - 0.5
        x0, y0 = int(np.floor(px)), int(np.floor(py))
        fx, fy = px - x0, py - y0
        ref = np.zeros(2)
        for dx, dy, w in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                          (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
            if 0 <= x0 + dx < 32 and 0 <= y0 + dy < 32:
                ref += w * img[y0 + dy, x0 + dx]
        assert np.abs(fl.data[r, c] - ref).max() < 1e-6


def test_pyramid_identity_and_constant():
    rng = np.random.default_rng(1)
    fm = FeatureMap(data=rng.normal(0, 1, (16, 16, 4)),
                    valid=np.ones((16, 16), dtype=bool))
    lv = build_pyramid(fm, 1)
    assert len(lv) == 1
    assert np.array_equal(lv[0].data, fm.data)

    const = FeatureMap(data=np.full((16, 16, 2), 3.25),
                       valid=np.ones((16, 16), dtype=bool))
    for level in build_pyramid(const, 3):
        assert np.allclose(level.data, 3.25)


def test_pyramid_matches_pooling_oracle():
    rng = np.random.default_rng(2)
    fm = FeatureMap(data=rng.normal(0, 1, (32, 32, 3)),
                    valid=rng.uniform(size=(32, 32)) > 0.3)
    fm.data[~fm.valid] = 0.0
    levels = build_pyramid(fm, 3)
    cur_d, cur_v = fm.data, fm.valid
    for level in levels[1:]:
        k = cur_d.shape[0] // 2
        exp_d = np.zeros((k, k, cur_d.shape[2]))
        exp_v = np.zeros((k, k), dtype=bool)
        for r in range(k):
            for c in range(k):
                vals, cnt = 0.0, 0
                for dr in range(2):
                    for dc in range(2):
                        if cur_v[2 * r + dr, 2 * c + dc]:
                            vals = vals + cur_d[2 * r + dr, 2 * c + dc]
                            cnt += 1
                if cnt:
                    exp_d[r, c] = vals / cnt
                    exp_v[r, c] = True
        assert np.array_equal(level.valid, exp_v)
        assert np.abs(level.data - exp_d).max() < 1e-12
        cur_d, cur_v = level.data, level.valid


def test_pyramid_divisibility_enforced():
    fm = FeatureMap(data=np.zeros((12, 12, 1)), valid=np.ones((12, 12), bool))
    with pytest.raises(ValidationError):
        build_pyramid(fm, 4)


def _symmetric_atlas(head_mesh):
    return build_uv_atlas(head_mesh, 32)


def test_attention_empty_keys_identity(head_mesh):
    atlas = _symmetric_atlas(head_mesh)
    rng = np.random.default_rng(3)
    fg = FeatureMap(data=rng.normal(0, 1, (32, 32, 4)),
                    valid=atlas.valid.copy())
    fg.data[~fg.valid] = 0.0
    fl = FeatureMap(data=np.zeros((32, 32, 4)),
                    valid=np.zeros((32, 32), dtype=bool))
    out = symmetric_window_attention(fg, fl, mirror_indices(atlas),
                                     AttentionConfig(window=7, layers=2, seed=0))
    assert np.array_equal(out.data, fg.data)


def test_attention_w1_single_key_scalar_oracle(head_mesh):
    atlas = _symmetric_atlas(head_mesh)
    rng = np.random.default_rng(4)
    c = 3
    fg = FeatureMap(data=rng.normal(0, 1, (32, 32, c)), valid=atlas.valid.copy())
    fl = FeatureMap(data=rng.normal(0, 1, (32, 32, c)), valid=atlas.valid.copy())
    fg.data[~atlas.valid] = 0.0
    fl.data[~atlas.valid] = 0.0
    cfg = AttentionConfig(window=1, layers=1, seed=9, value_identity=True)
    out = symmetric_window_attention(fg, fl, mirror_indices(atlas), cfg)

    from uvsplat.fuse import _layer_weights
    wq, wk, wv, w1, w2 = _layer_weights(np.random.default_rng(9), c, True)
    mr, mc = mirror_indices(atlas)
    for r, cc_ in [(5, 7), (10, 20), (16, 3), (28, 28)]:
        if not atlas.valid[r, cc_]:
            continue
        q = wq @ fg.data[r, cc_]
        keys = [(r, cc_)]
        if mr[r, cc_] >= 0:
            keys.append((int(mr[r, cc_]), int(mc[r, cc_])))
        keys = [t for t in keys if fl.valid[t]]
        logits = np.array([q @ (wk @ fl.data[t]) / np.sqrt(c) for t in keys])
        ex = np.exp(logits - logits.max())
        attn = sum(w * fl.data[t] for w, t in zip(ex / ex.sum(), keys))
        res = fg.data[r, cc_] + attn
        ff = res + w2 @ np.maximum(w1 @ res, 0.0)
        assert np.abs(out.data[r, cc_] - ff).max() < 1e-10


def test_attention_equivariant_under_mirroring(head_mesh):
    atlas = _symmetric_atlas(head_mesh)
    mr, mc = mirror_indices(atlas)
    rng = np.random.default_rng(5)
    c = 4
    fg = FeatureMap(data=rng.normal(0, 1, (32, 32, c)), valid=atlas.valid.copy())
    fl_valid = atlas.valid & (rng.uniform(size=(32, 32)) > 0.4)
    fl = FeatureMap(data=rng.normal(0, 1, (32, 32, c)), valid=fl_valid)
    fg.data[~fg.valid] = 0.0
    fl.data[~fl.valid] = 0.0

    def mirrored(fm):
        data = np.zeros_like(fm.data)
        valid = np.zeros_like(fm.valid)
        has = mr >= 0
        data[has] = fm.data[mr[has], mc[has]]
        valid[has] = fm.valid[mr[has], mc[has]]
        return FeatureMap(data=data, valid=valid, scale_index=fm.scale_index)

    cfg = AttentionConfig(window=5, layers=2, seed=1)
    out = symmetric_window_attention(fg, fl, (mr, mc), cfg)
    out_m = symmetric_window_attention(mirrored(fg), mirrored(fl), (mr, mc), cfg)
    assert np.abs(mirrored(out).data - out_m.data).max() < 1e-5


def test_attention_even_window_rejected(head_mesh):
    atlas = _symmetric_atlas(head_mesh)
    fm = FeatureMap(data=np.zeros((32, 32, 2)), valid=atlas.valid.copy())
    with pytest.raises(ValidationError):
        symmetric_window_attention(fm, fm, mirror_indices(atlas),
                                   AttentionConfig(window=4))


def test_occlusion_mask_rules(head_mesh):
    atlas = _symmetric_atlas(head_mesh)
    rng = np.random.default_rng(6)
    data = rng.normal(0, 1, (32, 32, 5))
    data[~atlas.valid] = 0.0
    fc = FeatureMap(data=data.copy(), valid=atlas.valid.copy())
    fl = FeatureMap(data=data.copy(), valid=atlas.valid.copy())
    assert np.array_equal(occlusion_mask(fc, fl, 0.5).values,
                          atlas.valid.astype(float))
    fl_neg = FeatureMap(data=-data, valid=atlas.valid.copy())
    assert np.all(occlusion_mask(fc, fl_neg, 0.5).values == 0.0)


def test_occlusion_matches_cosine_oracle(head_mesh):
    atlas = _symmetric_atlas(head_mesh)
    rng = np.random.default_rng(7)
    fc = FeatureMap(data=rng.normal(0, 1, (32, 32, 4)), valid=atlas.valid.copy())
    fl = FeatureMap(data=rng.normal(0, 1, (32, 32, 4)),
                    valid=atlas.valid & (rng.uniform(size=(32, 32)) > 0.3))
    fc.data[~fc.valid] = 0.0
    fl.data[~fl.valid] = 0.0
    theta = 0.5
    out = occlusion_mask(fc, fl, theta)
    for r in range(0, 32, 5):
        for c in range(0, 32, 7):
            a, b = fc.data[r, c], fl.data[r, c]
            na, nb = np.linalg.norm(a), np.linalg.norm(b)
            cos = 0.0 if na == 0 or nb == 0 else float(a @ b / (na * nb))
            expect = 1.0 if (cos >= theta and fl.valid[r, c]) else 0.0
            assert out.values[r, c] == expect


def test_completion_unit_masks_pass_through(head_mesh):
    atlas = _symmetric_atlas(head_mesh)
    rng = np.random.default_rng(8)
    fl = FeatureMap(data=rng.normal(0, 1, (32, 32, 3)), valid=atlas.valid.copy())
    fl.data[~atlas.valid] = 0.0
    ones = MaskMap(values=atlas.valid.astype(float))
    out = symmetric_completion(fl, ones, ones, mirror_indices(atlas),
                               atlas.valid)
    assert np.abs(out.data - fl.data).max() < 1e-12


def test_completion_half_visibility_mirrors(head_mesh):
    atlas = _symmetric_atlas(head_mesh)
    mr, mc = mirror_indices(atlas)
    rng = np.random.default_rng(9)
    cols = np.arange(32)[None, :].repeat(32, axis=0)
    left = atlas.valid & (cols < 16)
    fl_data = rng.normal(0, 1, (32, 32, 3))
    fl_data[~left] = 0.0
    fl = FeatureMap(data=fl_data, valid=left)
    mv = MaskMap(values=left.astype(float))
    mo = MaskMap(values=left.astype(float))
    out = symmetric_completion(fl, mv, mo, (mr, mc), atlas.valid)
    right = atlas.valid & (cols >= 16)
    idx = np.argwhere(right)
    for r, c in idx[::23]:
        m_r, m_c = mr[r, c], mc[r, c]
        assert m_r >= 0
        assert np.array_equal(out.data[r, c], fl_data[m_r, m_c])
    left_idx = np.argwhere(left)
    for r, c in left_idx[::23]:
        assert np.array_equal(out.data[r, c], fl_data[r, c])


def test_completion_matches_formula_oracle(head_mesh):
    atlas = _symmetric_atlas(head_mesh)
    mr, mc = mirror_indices(atlas)
    rng = np.random.default_rng(10)
    fl = FeatureMap(data=rng.normal(0, 1, (32, 32, 2)), valid=atlas.valid.copy())
    fl.data[~atlas.valid] = 0.0
    mv = MaskMap(values=rng.uniform(0, 1, (32, 32)) * atlas.valid)
    mo = MaskMap(values=(rng.uniform(size=(32, 32)) > 0.5) * atlas.valid)
    out = symmetric_completion(fl, mv, mo, (mr, mc), atlas.valid)
    for r in range(0, 32, 3):
        for c in range(0, 32, 4):
            if not atlas.valid[r, c]:
                assert np.all(out.data[r, c] == 0)
                continue
            flm = mo.values[r, c] * fl.data[r, c]
            if mr[r, c] >= 0:
                flip = mo.values[mr[r, c], mc[r, c]] * fl.data[mr[r, c], mc[r, c]]
                expect = flm + flip * (1 - mv.values[r, c] * mo.values[r, c])
            else:
                expect = flm
            assert np.abs(out.data[r, c] - expect).max() < 1e-7


def test_stack_empty_visibility_degenerates_to_global(head_mesh):
    atlas = _symmetric_atlas(head_mesh)
    fg = synthesize_global_features(atlas, 4, seed=2)
    fl = FeatureMap(data=np.zeros((32, 32, 4)), valid=np.zeros((32, 32), bool))
    mv = MaskMap(values=np.zeros((32, 32)))
    levels = fuse_stack(fg, fl, mv, atlas, n_scales=2, window=5, layers=2,
                        theta_occ=0.5, seed=0)
    for lv in levels:
        assert np.array_equal(lv.f_c.data, lv.f_g.data)
        assert np.all(lv.f_m.data == 0.0)
        ref = fuse_conv(lv.f_c, FeatureMap(np.zeros_like(lv.f_m.data),
                                           lv.f_m.valid, lv.f_m.scale_index),
                        seed=0 + 101 + (0 if lv.f_f.k == 32 else 1))
        assert np.array_equal(lv.f_f.data, ref.data)


def test_stack_mirror_symmetric_inputs_give_symmetric_output(head_mesh):
    atlas = _symmetric_atlas(head_mesh)
    mr, mc = mirror_indices(atlas)
    centers = atlas.texel_centers()
    u, v = centers[..., 0], centers[..., 1]
    c = 4
    fg_data = np.stack([np.cos(2 * np.pi * (i + 1) * np.abs(u - 0.5)) *
                        np.sin(2 * np.pi * v + i) for i in range(c)], axis=2)
    fl_data = np.stack([np.sin(3 * np.abs(u - 0.5) + i) * np.cos(v + i)
                        for i in range(c)], axis=2)
    fg_data[~atlas.valid] = 0.0
    fl_data[~atlas.valid] = 0.0
    vis = (v < 0.6).astype(float) * atlas.valid
    fg = FeatureMap(data=fg_data, valid=atlas.valid.copy())
    fl = FeatureMap(data=fl_data, valid=atlas.valid & (vis > 0.5))
    levels = fuse_stack(fg, fl, MaskMap(values=vis), atlas, n_scales=3,
                        window=5, layers=2, theta_occ=0.5, seed=4)
    for lv in levels:
        k = lv.f_f.k
        m_r, m_c = lv.mirror_rc
        has = m_r >= 0
        diff = lv.f_f.data[has] - lv.f_f.data[m_r[has], m_c[has]]
        assert np.abs(diff).max() < 1e-5
