"""Perspective splat projection (EWA convention) and its gradient chain.

The 3D covariance is rebuilt from rotation and per-axis scale,
``S = R_q diag(s^2) R_q^T``, pushed through the linearized projection
``S2 = J W S W^T J^T`` and dilated by +0.3 px^2 as the standard screen-space
low-pass. Gaussians closer than the near plane (z < 0.01) are culled
silently but counted.
"""

from dataclasses import dataclass

import numpy as np

from uvsplat.quat import quat_to_rot

NEAR_PLANE = 0.01
COV_DILATION = 0.3


@dataclass
class ProjectedSplats:
    mean2: np.ndarray       # (n, 2) pixel coords of kept splats
    cov2: np.ndarray        # (n, 2, 2) dilated screen-space covariance
    depth: np.ndarray       # (n,) camera z
    color: np.ndarray       # (n, 3) passthrough
    opacity: np.ndarray     # (n,)
    index: np.ndarray       # (n,) indices into the source GaussianSet
    n_total: int
    n_culled: int
    # retained intermediates for the backward chain
    x_cam: np.ndarray       # (n, 3)
    q_unit: np.ndarray      # (n, 4)
    q_norm: np.ndarray      # (n,) norm of the raw quaternion
    scale: np.ndarray       # (n, 3)
    rot_mat: np.ndarray     # (n, 3, 3)
    jac: np.ndarray         # (n, 2, 3)
    cam: object = None

    def __len__(self):
        return self.mean2.shape[0]


def project(gaussians, cam):
    """Project a GaussianSet; returns kept splats sorted as in the input."""
    cam.validate()
    pos = np.asarray(gaussians.position, dtype=np.float64)
    x_cam = pos @ cam.R.T + cam.t
    keep = x_cam[:, 2] >= NEAR_PLANE
    index = np.nonzero(keep)[0]
    x_cam = x_cam[keep]
    n = x_cam.shape[0]

    q_raw = np.asarray(gaussians.rotation, dtype=np.float64)[keep]
    q_norm = np.linalg.norm(q_raw, axis=1)
    q_unit = q_raw / q_norm[:, None]
    rot = quat_to_rot(q_unit)
    scale = np.asarray(gaussians.scale, dtype=np.float64)[keep]
    sigma = rot @ (scale[:, :, None] ** 2 * np.transpose(rot, (0, 2, 1)))

    x, y, z = x_cam[:, 0], x_cam[:, 1], x_cam[:, 2]
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx / z
    jac[:, 0, 2] = -cam.fx * x / z ** 2
    jac[:, 1, 1] = cam.fy / z
    jac[:, 1, 2] = -cam.fy * y / z ** 2

    jw = jac @ cam.R
    cov2 = jw @ sigma @ np.transpose(jw, (0, 2, 1))
    cov2 = 0.5 * (cov2 + np.transpose(cov2, (0, 2, 1)))
    cov2[:, 0, 0] += COV_DILATION
    cov2[:, 1, 1] += COV_DILATION

    mean2 = np.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], axis=1)
    return ProjectedSplats(
        mean2=mean2, cov2=cov2, depth=z.copy(),
        color=np.asarray(gaussians.color, dtype=np.float64)[keep],
        opacity=np.asarray(gaussians.opacity, dtype=np.float64).reshape(-1)[keep],
        index=index, n_total=len(gaussians), n_culled=int(len(gaussians) - n),
        x_cam=x_cam, q_unit=q_unit, q_norm=q_norm, scale=scale,
        rot_mat=rot, jac=jac, cam=cam)


def _rot_quat_partials(q):
    """(n, 4, 3, 3) partial derivatives of quat_to_rot w.r.t. q components."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros_like(w)
    def mat(rows):
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)
    dw = 2 * mat([[zero, -z, y], [z, zero, -x], [-y, x, zero]])
    dx = 2 * mat([[zero, y, z], [y, -2 * x, -w], [z, w, -2 * x]])
    dy = 2 * mat([[-2 * y, x, w], [x, zero, z], [-w, z, -2 * y]])
    dz = 2 * mat([[-2 * z, -w, x], [w, -2 * z, y], [x, y, zero]])
    return np.stack([dw, dx, dy, dz], axis=1)


def backprop_projection(splats, d_mean2, d_cov2):
    """Chain screen-space gradients to world position, raw quaternion and
    scale of the kept splats. ``d_cov2`` is the full symmetric (n, 2, 2)
    matrix gradient w.r.t. the (dilated) 2D covariance."""
    cam = splats.cam
    n = len(splats)
    x, y, z = splats.x_cam[:, 0], splats.x_cam[:, 1], splats.x_cam[:, 2]

    rot = splats.rot_mat
    s2 = splats.scale ** 2
    sigma = rot @ (s2[:, :, None] * np.transpose(rot, (0, 2, 1)))
    m_mat = cam.R @ sigma @ cam.R.T          # (n, 3, 3)

    g2 = 0.5 * (d_cov2 + np.transpose(d_cov2, (0, 2, 1)))
    d_jac = 2.0 * (g2 @ splats.jac @ m_mat)
    d_m = np.transpose(splats.jac, (0, 2, 1)) @ g2 @ splats.jac
    d_sigma = cam.R.T @ d_m @ cam.R

    d_rot = 2.0 * (d_sigma @ rot * s2[:, None, :])
    rhr = np.einsum("nba,nbc,ncd->nad", rot, d_sigma, rot)
    d_scale = 2.0 * splats.scale * np.einsum("naa->na", rhr)

    partials = _rot_quat_partials(splats.q_unit)
    d_q_unit = np.einsum("nab,niab->ni", d_rot, partials)
    d_q = (d_q_unit - splats.q_unit * np.einsum(
        "ni,ni->n", splats.q_unit, d_q_unit)[:, None]) / splats.q_norm[:, None]

    d_xcam = np.einsum("nca,nc->na", splats.jac, d_mean2)
    fz2x = -cam.fx / z ** 2
    fz2y = -cam.fy / z ** 2
    d_xcam[:, 0] += d_jac[:, 0, 2] * fz2x
    d_xcam[:, 1] += d_jac[:, 1, 2] * fz2y
    d_xcam[:, 2] += (d_jac[:, 0, 0] * fz2x + d_jac[:, 1, 1] * fz2y
                     + d_jac[:, 0, 2] * (2 * cam.fx * x / z ** 3)
                     + d_jac[:, 1, 2] * (2 * cam.fy * y / z ** 3))
    d_pos = d_xcam @ cam.R
    return d_pos, d_q, d_scale
