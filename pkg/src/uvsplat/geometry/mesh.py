"""Parametric head mesh: template + blendshape bases + linear blend skinning.

The deformation model is the usual one: shape/pose/expression blendshapes
added to the template, then skinned against a joint tree whose rest joints
are regressed from the shaped template. The pose-blendshape feature vector is
the flattened (R_j - I) of every non-root joint, so ``pose_basis`` either has
9*(J-1) columns or is empty.
"""

from dataclasses import dataclass, field

import numpy as np

from uvsplat.errors import ValidationError
from uvsplat.quat import axis_angle_to_rot

REGION_TAGS = ("face", "hair", "left_eye", "right_eye", "mouth_interior_cover")


@dataclass
class HeadMesh:
    vertices: np.ndarray          # (V, 3) head units
    triangles: np.ndarray         # (F, 3) int
    uv_corners: np.ndarray        # (F, 3, 2) in [0, 1]^2
    shape_basis: np.ndarray       # (V, 3, n_beta)
    pose_basis: np.ndarray        # (V, 3, n_pose)
    expr_basis: np.ndarray        # (V, 3, n_psi)
    skin_weights: np.ndarray      # (V, J), rows sum to 1
    joint_regressor: np.ndarray   # (J, V)
    joint_parents: np.ndarray     # (J,), parent index, -1 for root
    region_labels: np.ndarray     # (F,) str tags
    mirror_symmetric: bool = False
    name: str = field(default="head")

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def n_joints(self):
        return self.skin_weights.shape[1]

    @property
    def n_beta(self):
        return self.shape_basis.shape[2]

    @property
    def n_psi(self):
        return self.expr_basis.shape[2]

    def validate(self):
        v = self.n_vertices
        if self.triangles.min(initial=0) < 0 or self.triangles.max(initial=-1) >= v:
            raise ValidationError("triangle indices out of vertex range")
        rowsum = self.skin_weights.sum(axis=1)
        if not np.allclose(rowsum, 1.0, atol=1e-6):
            bad = int(np.argmax(np.abs(rowsum - 1.0)))
            raise ValidationError(
                f"skin-weight row {bad} sums to {rowsum[bad]:.6f}, expected 1")
        uv = self.uv_corners
        e1 = uv[:, 1] - uv[:, 0]
        e2 = uv[:, 2] - uv[:, 0]
        area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(np.abs(area2) <= 0.0):
            bad = int(np.argmin(np.abs(area2)))
            raise ValidationError(f"UV triangle {bad} is degenerate")
        if np.any(uv < -1e-9) or np.any(uv > 1.0 + 1e-9):
            raise ValidationError("UV coordinates outside [0,1]^2")
        parents = self.joint_parents
        if parents[0] != -1 or np.any(parents[1:] >= np.arange(1, len(parents))):
            raise ValidationError("joint parents must be topologically ordered with root first")
        npose = self.pose_basis.shape[2]
        if npose not in (0, 9 * (self.n_joints - 1)):
            raise ValidationError(
                f"pose basis has {npose} columns, expected 0 or {9 * (self.n_joints - 1)}")
        if self.region_labels.shape[0] != self.n_triangles:
            raise ValidationError("region label count does not match triangle count")
        return self


@dataclass
class PoseParams:
    beta: np.ndarray
    theta: np.ndarray   # axis-angle per joint, length 3*J
    psi: np.ndarray

    @classmethod
    def zeros(cls, mesh):
        return cls(beta=np.zeros(mesh.n_beta),
                   theta=np.zeros(3 * mesh.n_joints),
                   psi=np.zeros(mesh.n_psi))

    def validate(self, mesh):
        if len(self.beta) != mesh.n_beta:
            raise ValidationError(
                f"beta has {len(self.beta)} coefficients, mesh wants {mesh.n_beta}")
        if len(self.theta) != 3 * mesh.n_joints:
            raise ValidationError(
                f"theta has {len(self.theta)} values, mesh wants {3 * mesh.n_joints}")
        if len(self.psi) != mesh.n_psi:
            raise ValidationError(
                f"psi has {len(self.psi)} coefficients, mesh wants {mesh.n_psi}")
        for name, arr in (("beta", self.beta), ("theta", self.theta), ("psi", self.psi)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
        return self


def _pose_feature(rots):
    """Flattened (R_j - I) over non-root joints."""
    if rots.shape[0] <= 1:
        return np.zeros(0)
    return (rots[1:] - np.eye(3)).reshape(-1)


def _skinning_transforms(joints, rots, parents):
    """Per-joint 4x4 world transforms relative to the rest pose."""
    J = joints.shape[0]
    A = np.zeros((J, 4, 4))
    for j in range(J):
        local = np.eye(4)
        local[:3, :3] = rots[j]
        parent = parents[j]
        if parent < 0:
            local[:3, 3] = joints[j]
            A[j] = local
        else:
            local[:3, 3] = joints[j] - joints[parent]
            A[j] = A[parent] @ local
    G = A.copy()
    # remove the rest-pose joint location so G maps rest space to posed space
    G[:, :3, 3] -= np.einsum("jab,jb->ja", A[:, :3, :3], joints)
    return G


def deform(mesh, params):
    """Blendshape + LBS deformation; all-zero params reproduce the template."""
    params.validate(mesh)
    theta = np.asarray(params.theta, dtype=np.float64).reshape(-1, 3)
    rots = axis_angle_to_rot(theta)

    shaped = mesh.vertices + mesh.shape_basis @ params.beta
    v = shaped + mesh.expr_basis @ params.psi
    if mesh.pose_basis.shape[2]:
        v = v + mesh.pose_basis @ _pose_feature(rots)

    joints = mesh.joint_regressor @ shaped
    G = _skinning_transforms(joints, rots, mesh.joint_parents)
    M = np.einsum("vj,jab->vab", mesh.skin_weights, G)
    return np.einsum("vab,vb->va", M[:, :3, :3], v) + M[:, :3, 3]
