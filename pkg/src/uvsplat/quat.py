"""Quaternion helpers, (w, x, y, z) convention, vectorized over leading axes."""

import numpy as np


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a, b):
    """Hamilton product a * b."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_left_matrix(q):
    """4x4 matrix L with L @ p == quat_mul(q, p)."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    row = np.stack
    return np.stack([
        row([w, -x, -y, -z], axis=-1),
        row([x, w, -z, y], axis=-1),
        row([y, z, w, -x], axis=-1),
        row([z, -y, x, w], axis=-1),
    ], axis=-2)


def quat_to_rot(q):
    """Unit quaternion(s) to rotation matrix(es)."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    row = np.stack
    return np.stack([
        row([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
        row([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
        row([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
    ], axis=-2)


def rot_to_quat(R):
    """Rotation matrix(es) to unit quaternion(s) with w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    shape = R.shape[:-2]
    R = R.reshape(-1, 3, 3)
    n = R.shape[0]
    q = np.empty((n, 4))
    # four-branch extraction, branch chosen per element for stability
    tr = R[:, 0, 0] + R[:, 1, 1] + R[:, 2, 2]
    diag = np.stack([tr, R[:, 0, 0], R[:, 1, 1], R[:, 2, 2]], axis=1)
    branch = np.argmax(diag, axis=1)
    for b in range(4):
        idx = np.nonzero(branch == b)[0]
        if idx.size == 0:
            continue
        r = R[idx]
        if b == 0:
            s = np.sqrt(tr[idx] + 1.0) * 2.0
            q[idx, 0] = 0.25 * s
            q[idx, 1] = (r[:, 2, 1] - r[:, 1, 2]) / s
            q[idx, 2] = (r[:, 0, 2] - r[:, 2, 0]) / s
            q[idx, 3] = (r[:, 1, 0] - r[:, 0, 1]) / s
        else:
            i = b - 1
            j, k = (i + 1) % 3, (i + 2) % 3
            s = np.sqrt(1.0 + r[:, i, i] - r[:, j, j] - r[:, k, k]) * 2.0
            q[idx, 0] = (r[:, k, j] - r[:, j, k]) / s
            q[idx, 1 + i] = 0.25 * s
            q[idx, 1 + j] = (r[:, j, i] + r[:, i, j]) / s
            q[idx, 1 + k] = (r[:, k, i] + r[:, i, k]) / s
    flip = q[:, 0] < 0
    q[flip] *= -1.0
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q.reshape(shape + (4,))


def axis_angle_to_rot(w):
    """Rodrigues formula for axis-angle vectors (..., 3)."""
    w = np.asarray(w, dtype=np.float64)
    shape = w.shape[:-1]
    w = w.reshape(-1, 3)
    angle = np.linalg.norm(w, axis=1)
    out = np.tile(np.eye(3), (w.shape[0], 1, 1))
    small = angle < 1e-12
    k = np.zeros_like(w)
    nz = ~small
    k[nz] = w[nz] / angle[nz, None]
    K = np.zeros((w.shape[0], 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -k[:, 2], k[:, 1]
    K[:, 1, 0], K[:, 1, 2] = k[:, 2], -k[:, 0]
    K[:, 2, 0], K[:, 2, 1] = -k[:, 1], k[:, 0]
    s = np.sin(angle)[:, None, None]
    c = (1.0 - np.cos(angle))[:, None, None]
    out = out + s * K + c * (K @ K)
    out[small] = np.eye(3)
    return out.reshape(shape + (3, 3))
