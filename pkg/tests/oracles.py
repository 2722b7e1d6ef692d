"""Independent reference implementations used as test oracles.

Everything here is written as straight-line scalar (or minimally vectorized)
code, deliberately not sharing math or structure with the library paths it
checks.
"""

import numpy as np


def lbs_oracle(mesh, params):
    """Per-vertex blendshape + LBS with explicit 4x4 matrix chains."""
    beta, theta, psi = params.beta, np.asarray(params.theta).reshape(-1, 3), params.psi
    v = mesh.n_vertices
    j = mesh.n_joints

    def rodrigues(w):
        angle = np.linalg.norm(w)
        if angle < 1e-12:
            return np.eye(3)
        k = w / angle
        K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
        return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)

    rots = [rodrigues(theta[i]) for i in range(j)]
    shaped = mesh.vertices.copy()
    for b in range(mesh.n_beta):
        shaped = shaped + mesh.shape_basis[:, :, b] * beta[b]
    posed = shaped.copy()
    for e in range(mesh.n_psi):
        posed = posed + mesh.expr_basis[:, :, e] * psi[e]
    if mesh.pose_basis.shape[2]:
        feat = np.concatenate([(rots[i] - np.eye(3)).reshape(-1)
                               for i in range(1, j)])
        posed = posed + mesh.pose_basis @ feat

    joints = mesh.joint_regressor @ shaped
    world = [None] * j
    for i in range(j):
        local = np.eye(4)
        local[:3, :3] = rots[i]
        p = mesh.joint_parents[i]
        if p < 0:
            local[:3, 3] = joints[i]
            world[i] = local
        else:
            local[:3, 3] = joints[i] - joints[p]
            world[i] = world[p] @ local
    out = np.zeros((v, 3))
    for vi in range(v):
        acc = np.zeros(3)
        for ji in range(j):
            w = mesh.skin_weights[vi, ji]
            if w == 0.0:
                continue
            G = world[ji].copy()
            G[:3, 3] -= G[:3, :3] @ joints[ji]
            acc += w * (G[:3, :3] @ posed[vi] + G[:3, 3])
        out[vi] = acc
    return out


def count_covered_texels(mesh, k):
    """Brute-force sign-area point-in-triangle count of texel centers."""
    uv = mesh.uv_corners
    centers = (np.arange(k) + 0.5) / k

    def cross2(ax, ay, bx, by):
        return ax * by - ay * bx

    count = 0
    for r in range(k):
        v = centers[r]
        px, py = centers, np.full(k, v)
        covered = np.zeros(k, dtype=bool)
        for f in range(uv.shape[0]):
            a, b, c = uv[f]
            s0 = cross2(b[0] - a[0], b[1] - a[1], px - a[0], py - a[1])
            s1 = cross2(c[0] - b[0], c[1] - b[1], px - b[0], py - b[1])
            s2 = cross2(a[0] - c[0], a[1] - c[1], px - c[0], py - c[1])
            eps = 1e-12
            inside = ((s0 >= -eps) & (s1 >= -eps) & (s2 >= -eps)) | \
                     ((s0 <= eps) & (s1 <= eps) & (s2 <= eps))
            covered |= inside
        count += int(covered.sum())
    return count


def scalar_sample_gaussian(maps, atlas, uv, verts):
    """Single-point sampler: explicit neighbor loop, no batched paths.

    Returns a dict or None if the point has no valid neighbor.
    """
    k = atlas.k
    x = uv[0] * k - 0.5
    y = uv[1] * k - 0.5
    c0, r0 = int(np.floor(x)), int(np.floor(y))
    fx, fy = x - c0, y - r0
    neigh = [(r0, c0, (1 - fx) * (1 - fy)), (r0, c0 + 1, fx * (1 - fy)),
             (r0 + 1, c0, (1 - fx) * fy), (r0 + 1, c0 + 1, fx * fy)]
    total = 0.0
    acc_raw = np.zeros(14)
    acc_s = 0.0
    acc_pr = np.zeros(3)
    best = None
    best_w = -1.0
    pr_map = np.zeros((k, k, 3))
    for rr in range(k):
        for cc in range(k):
            if atlas.valid[rr, cc]:
                tri = atlas.triangles[atlas.tri_index[rr, cc]]
                p = sum(atlas.bary[rr, cc][i] * verts[tri[i]] for i in range(3))
                pr_map[rr, cc] = p + maps.shape_offset[rr, cc]
    for rr, cc, w in neigh:
        if rr < 0 or rr >= k or cc < 0 or cc >= k or not atlas.valid[rr, cc]:
            continue
        total += w
        acc_raw += w * maps.raw[rr, cc]
        acc_s += w * atlas.rel_scale[rr, cc]
        acc_pr += w * pr_map[rr, cc]
        if w > best_w:
            best_w = w
            best = (rr, cc)
    if total <= 1e-12:
        return None
    raw = acc_raw / total
    s = acc_s / total
    pr = acc_pr / total

    def sigmoid(v):
        return 1.0 / (1.0 + np.exp(-v))

    color = sigmoid(raw[0:3])
    vq = raw[3:7].copy()
    vq[0] += 1.0
    q_local = vq / np.linalg.norm(vq)
    scale = np.clip(s * np.exp(raw[7:10]), 1e-5, 0.5)
    opacity = sigmoid(raw[10])
    offset = 0.05 * np.tanh(raw[11:14])

    tri_id = atlas.tri_index[best]
    tri = atlas.triangles[tri_id]
    v0, v1, v2 = verts[tri]
    e1, e2 = v1 - v0, v2 - v0
    n = np.cross(e1, e2)
    if 0.5 * np.linalg.norm(n) < 1e-12:
        frame = np.eye(3)
    else:
        n = n / np.linalg.norm(n)
        duv1 = atlas.uv_corners[tri_id, 1] - atlas.uv_corners[tri_id, 0]
        duv2 = atlas.uv_corners[tri_id, 2] - atlas.uv_corners[tri_id, 0]
        det = duv1[0] * duv2[1] - duv2[0] * duv1[1]
        t = (duv2[1] * e1 - duv1[1] * e2) / det
        t = t - (t @ n) * n
        t = t / np.linalg.norm(t)
        frame = np.stack([t, np.cross(n, t), n], axis=1)

    def mat_to_quat(m):
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0:
            s4 = np.sqrt(tr + 1.0) * 2
            q = np.array([0.25 * s4, (m[2, 1] - m[1, 2]) / s4,
                          (m[0, 2] - m[2, 0]) / s4, (m[1, 0] - m[0, 1]) / s4])
        elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
            s4 = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
            q = np.array([(m[2, 1] - m[1, 2]) / s4, 0.25 * s4,
                          (m[0, 1] + m[1, 0]) / s4, (m[0, 2] + m[2, 0]) / s4])
        elif m[1, 1] >= m[2, 2]:
            s4 = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
            q = np.array([(m[0, 2] - m[2, 0]) / s4, (m[0, 1] + m[1, 0]) / s4,
                          0.25 * s4, (m[1, 2] + m[2, 1]) / s4])
        else:
            s4 = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
            q = np.array([(m[1, 0] - m[0, 1]) / s4, (m[0, 2] + m[2, 0]) / s4,
                          (m[1, 2] + m[2, 1]) / s4, 0.25 * s4])
        if q[0] < 0:
            q = -q
        return q / np.linalg.norm(q)

    def quat_mul(a, b):
        return np.array([
            a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]])

    return {
        "position": pr + frame @ offset,
        "rotation": quat_mul(mat_to_quat(frame), q_local),
        "scale": scale,
        "opacity": opacity,
        "color": color,
    }


def naive_composite(splats, channels, cam, bg):
    """All-Gaussians-per-pixel compositing loop with the documented weight
    clamp (0.999), skip threshold (1e-8) and transmittance floor (1e-4)."""
    H, W = cam.height, cam.width
    channels = np.asarray(channels, dtype=np.float64)
    if channels.ndim == 1:
        channels = channels[:, None]
    C = channels.shape[1]
    ch = channels[splats.index]
    order = np.argsort(splats.depth, kind="stable")
    a = splats.cov2[:, 0, 0]
    b = splats.cov2[:, 0, 1]
    c2 = splats.cov2[:, 1, 1]
    det = a * c2 - b * b
    qa, qb, qc = c2 / det, -b / det, a / det
    bg = np.broadcast_to(np.asarray(bg, dtype=np.float64), (C,))
    out = np.zeros((H, W, C))
    alpha = np.zeros((H, W))
    for iy in range(H):
        for ix in range(W):
            T = 1.0
            acc = np.zeros(C)
            for s in order:
                dx = ix + 0.5 - splats.mean2[s, 0]
                dy = iy + 0.5 - splats.mean2[s, 1]
                p = 0.5 * (qa[s] * dx * dx + qc[s] * dy * dy) + qb[s] * dx * dy
                d = min(splats.opacity[s] * np.exp(-p), 0.999)
                if d < 1e-8:
                    continue
                tt = T * (1 - d)
                if tt < 1e-4:
                    break
                acc += ch[s] * d * T
                T = tt
            out[iy, ix] = acc + bg * T
            alpha[iy, ix] = 1 - T
    return out, alpha


def tv_loops(image, mask=None):
    """Double-loop masked TV."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    h, w, c = img.shape
    if mask is None:
        mask = np.ones((h, w), dtype=bool)
    total = 0.0
    n = 0
    for r in range(h):
        for col in range(w - 1):
            if mask[r, col] and mask[r, col + 1]:
                total += sum(abs(img[r, col + 1, ch] - img[r, col, ch])
                             for ch in range(c))
                n += 1
    for r in range(h - 1):
        for col in range(w):
            if mask[r, col] and mask[r + 1, col]:
                total += sum(abs(img[r + 1, col, ch] - img[r, col, ch])
                             for ch in range(c))
                n += 1
    return total / n if n else 0.0


def ray_visibility_oracle(p_r, valid, verts, triangles, cam, tau):
    """First-hit ray casting: a texel is visible iff no triangle is hit at a
    depth more than tau nearer than the texel point."""
    eye = -cam.R.T @ cam.t
    v0 = verts[triangles[:, 0]]
    e1 = verts[triangles[:, 1]] - v0
    e2 = verts[triangles[:, 2]] - v0
    out = np.zeros(p_r.shape[:2])
    idx = np.argwhere(valid)
    for r, c in idx:
        p = p_r[r, c]
        x_cam = cam.R @ p + cam.t
        z = x_cam[2]
        if z <= 1e-9:
            continue
        px = cam.fx * x_cam[0] / z + cam.cx
        py = cam.fy * x_cam[1] / z + cam.cy
        if not (0 <= int(np.floor(px)) < cam.width and
                0 <= int(np.floor(py)) < cam.height):
            continue
        d = p - eye
        pvec = np.cross(d[None, :], e2)
        det = np.einsum("ij,ij->i", e1, pvec)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = eye - v0
        u = np.einsum("ij,ij->i", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)
        v = (qvec @ d) * inv
        t = np.einsum("ij,ij->i", e2, qvec) * inv
        hit = ok & (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1 + 1e-12) & (t > 1e-9)
        if not hit.any():
            out[r, c] = 1.0
            continue
        t_min = t[hit].min()
        # depth along the ray scales with t; compare in depth units
        out[r, c] = 1.0 if z * t_min + tau >= z else 0.0
    return out
