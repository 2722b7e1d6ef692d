import numpy as np
import pytest

from uvsplat.geometry.atlas import build_uv_atlas
from uvsplat.geometry.mesh import HeadMesh
from uvsplat.geometry.prochead import make_head_mesh


def make_flat_quad(mirror=False):
    """Unit quad in z=0 with UV equal to xy; u runs along x."""
    vertices = np.array([[0.0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    triangles = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    uv = vertices[:, :2]
    uv_corners = uv[triangles]
    v = 4
    return HeadMesh(
        vertices=vertices, triangles=triangles, uv_corners=uv_corners,
        shape_basis=np.zeros((v, 3, 0)), pose_basis=np.zeros((v, 3, 0)),
        expr_basis=np.zeros((v, 3, 0)), skin_weights=np.ones((v, 1)),
        joint_regressor=np.zeros((1, v)), joint_parents=np.array([-1]),
        region_labels=np.array(["face", "face"], dtype="<U32"),
        mirror_symmetric=mirror, name="quad").validate()


def make_two_scale_mesh():
    """Two UV triangles; the first has 3D area four times its UV area, the
    second is isometric. Both sit in z=0."""
    vertices = np.array([
        [0.0, 0, 0], [2, 0, 0], [0, 2, 0],    # big triangle (area 2)
        [3.0, 0, 0], [4, 0, 0], [3, 1, 0],    # unit-ish triangle (area 0.5)
    ])
    triangles = np.array([[0, 1, 2], [3, 4, 5]], dtype=np.int32)
    uv_corners = np.array([
        [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],   # UV area 0.5, 3D area 2 -> ratio 4
        [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],   # UV area 0.5, 3D area 0.5 -> ratio 1
    ])
    v = 6
    return HeadMesh(
        vertices=vertices, triangles=triangles, uv_corners=uv_corners,
        shape_basis=np.zeros((v, 3, 0)), pose_basis=np.zeros((v, 3, 0)),
        expr_basis=np.zeros((v, 3, 0)), skin_weights=np.ones((v, 1)),
        joint_regressor=np.zeros((1, v)), joint_parents=np.array([-1]),
        region_labels=np.array(["face", "face"], dtype="<U32"),
        name="two_scale").validate()


@pytest.fixture
def quad_mesh():
    return make_flat_quad()


@pytest.fixture(scope="session")
def head_mesh():
    return make_head_mesh(seed=0)


@pytest.fixture(scope="session")
def head_atlas_64(head_mesh):
    return build_uv_atlas(head_mesh, 64)


@pytest.fixture(scope="session")
def head_atlas_32(head_mesh):
    return build_uv_atlas(head_mesh, 32)


def random_gaussians(rng, n, spread=0.3, scale_range=(0.02, 0.12),
                     opacity_range=(0.1, 0.95)):
    from uvsplat.gsmap import GaussianSet
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    return GaussianSet(
        position=rng.normal(0, spread, (n, 3)),
        rotation=rot,
        scale=rng.uniform(*scale_range, (n, 3)),
        opacity=rng.uniform(*opacity_range, n),
        color=rng.uniform(0, 1, (n, 3)),
        rig_uv=rng.uniform(0, 1, (n, 2)),
        rig_tri=np.zeros(n, dtype=np.int64))
