import numpy as np

from uvsplat.gsmap import GaussianSet
from uvsplat.splat import Camera, project

from conftest import random_gaussians


def _single(position, scale=0.1, opacity=0.8):
    return GaussianSet(position=np.array([position]),
                       rotation=np.array([[1.0, 0, 0, 0]]),
                       scale=np.full((1, 3), scale),
                       opacity=np.array([opacity]),
                       color=np.array([[1.0, 0, 0]]),
                       rig_uv=np.zeros((1, 2)),
                       rig_tri=np.zeros(1, dtype=np.int64))


def _frontal_cam(f=100.0, w=64, h=64):
    return Camera(fx=f, fy=f, cx=w / 2, cy=h / 2, R=np.eye(3),
                  t=np.zeros(3), width=w, height=h).validate()


def test_on_axis_isotropic_pinhole_algebra():
    f = 120.0
    cam = _frontal_cam(f=f)
    s = 0.05
    splats = project(_single([0.0, 0.0, 1.0], scale=s), cam)
    assert np.allclose(splats.mean2[0], [cam.cx, cam.cy])
    expect = f * f * s * s * np.eye(2) + 0.3 * np.eye(2)
    assert np.abs(splats.cov2[0] - expect).max() < 1e-9
    assert splats.depth[0] == 1.0


def test_behind_near_plane_culled():
    cam = _frontal_cam()
    splats = project(_single([0.0, 0.0, -1.0]), cam)
    assert len(splats) == 0
    assert splats.n_culled == 1


def test_cov2_matches_fd_jacobian_oracle():
    rng = np.random.default_rng(11)
    g = random_gaussians(rng, 30)
    cam = Camera.orbit(35, 20, 2.5, width=64, height=64)
    splats = project(g, cam)

    def pin(p):
        x = cam.R @ p + cam.t
        return np.array([cam.fx * x[0] / x[2] + cam.cx,
                         cam.fy * x[1] / x[2] + cam.cy])

    from uvsplat.quat import quat_to_rot
    for i in range(len(splats)):
        orig = splats.index[i]
        p = g.position[orig]
        h = 1e-5
        J = np.zeros((2, 3))
        for a in range(3):
            dp = np.zeros(3)
            dp[a] = h
            J[:, a] = (pin(p + dp) - pin(p - dp)) / (2 * h)
        R = quat_to_rot(g.rotation[orig] / np.linalg.norm(g.rotation[orig]))
        sigma = R @ np.diag(g.scale[orig] ** 2) @ R.T
        expect = J @ sigma @ J.T + 0.3 * np.eye(2)
        denom = max(np.abs(expect).max(), 1e-9)
        assert np.abs(splats.cov2[i] - expect).max() / denom < 1e-3


def test_depth_is_camera_z():
    cam = Camera.orbit(0, 0, 3.0, width=32, height=32)
    g = _single([0.0, 0.0, 0.5])
    splats = project(g, cam)
    x_cam = cam.R @ np.array([0, 0, 0.5]) + cam.t
    assert abs(splats.depth[0] - x_cam[2]) < 1e-12
