"""OBJ-subset mesh IO with sidecar tensors.

Supported OBJ statements are exactly ``v x y z``, ``vt u v`` and
``f a/b a/b a/b`` (1-based indices, triangles only). Rig tensors live next to
the .obj in ATL files, region labels in a ``triangle_index tag`` text file,
and a ``key = value`` manifest records counts and the mirror declaration.
Missing sidecars default to zero bases and single-joint rigid skinning.
"""

import os

import numpy as np

from uvsplat.errors import FormatError, ValidationError
from uvsplat.formats.atl import read_atl, write_atl
from uvsplat.geometry.mesh import HeadMesh

_SIDECARS = ("shape", "pose", "expr", "skin", "jreg", "parents")


def _sidecar(path, kind, ext):
    base, _ = os.path.splitext(path)
    return f"{base}.{kind}.{ext}"


def load_mesh(path):
    """Load an OBJ-subset mesh plus sidecars and validate invariants."""
    verts, uvs, faces, face_uvs = [], [], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if parts[0] == "v" and len(parts) == 4:
                    verts.append([float(x) for x in parts[1:]])
                elif parts[0] == "vt" and len(parts) == 3:
                    uvs.append([float(x) for x in parts[1:]])
                elif parts[0] == "f" and len(parts) == 4:
                    vi, ti = [], []
                    for tok in parts[1:]:
                        a, _, b = tok.partition("/")
                        vi.append(int(a) - 1)
                        ti.append(int(b) - 1)
                    faces.append(vi)
                    face_uvs.append(ti)
                else:
                    raise FormatError(f"unsupported statement '{line}'", lineno)
            except (ValueError, IndexError):
                raise FormatError(f"malformed statement '{line}'", lineno) from None
    if not verts or not faces:
        raise FormatError(f"{path}: no geometry found")

    vertices = np.asarray(verts, dtype=np.float64)
    uvs = np.asarray(uvs, dtype=np.float64)
    triangles = np.asarray(faces, dtype=np.int32)
    uv_idx = np.asarray(face_uvs, dtype=np.int64)
    if uv_idx.min() < 0 or uv_idx.max() >= len(uvs):
        raise FormatError(f"{path}: face UV index out of range")
    uv_corners = uvs[uv_idx]

    v, f = vertices.shape[0], triangles.shape[0]
    tensors = {}
    for kind in _SIDECARS:
        p = _sidecar(path, kind, "atl")
        tensors[kind] = read_atl(p).astype(np.float64) if os.path.exists(p) else None

    shape = tensors["shape"] if tensors["shape"] is not None else np.zeros((v, 3, 0))
    pose = tensors["pose"] if tensors["pose"] is not None else np.zeros((v, 3, 0))
    expr = tensors["expr"] if tensors["expr"] is not None else np.zeros((v, 3, 0))
    if tensors["skin"] is not None:
        skin = tensors["skin"]
        jreg = tensors["jreg"]
        parents = tensors["parents"].astype(np.int64).reshape(-1)
        if jreg is None or parents is None:
            raise ValidationError(f"{path}: skin weights present without joint sidecars")
    else:
        skin = np.ones((v, 1))
        jreg = np.zeros((1, v))
        parents = np.array([-1], dtype=np.int64)

    labels = np.array(["face"] * f, dtype="<U32")
    regions_path = _sidecar(path, "regions", "txt")
    if os.path.exists(regions_path):
        with open(regions_path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise FormatError(f"expected 'triangle_index tag'", lineno)
                try:
                    idx = int(parts[0])
                except ValueError:
                    raise FormatError(f"bad triangle index '{parts[0]}'", lineno) from None
                if not 0 <= idx < f:
                    raise FormatError(f"triangle index {idx} out of range", lineno)
                labels[idx] = parts[1]

    mirror = False
    manifest = read_manifest(_sidecar(path, "manifest", "txt"))
    if manifest:
        mirror = manifest.get("mirror_symmetric", "false") == "true"
        for key, expect in (("v", v), ("f", f)):
            if key in manifest and int(manifest[key]) != expect:
                raise ValidationError(
                    f"{path}: manifest records {key}={manifest[key]}, file has {expect}")

    mesh = HeadMesh(
        vertices=vertices, triangles=triangles, uv_corners=uv_corners,
        shape_basis=shape, pose_basis=pose, expr_basis=expr,
        skin_weights=skin, joint_regressor=jreg, joint_parents=parents,
        region_labels=labels, mirror_symmetric=mirror,
        name=os.path.splitext(os.path.basename(path))[0],
    )
    return mesh.validate()


def save_mesh(path, mesh, extra_manifest=None):
    """Write the OBJ plus every sidecar; returns the manifest dict."""
    uvs, uv_index = np.unique(mesh.uv_corners.reshape(-1, 2), axis=0,
                              return_inverse=True)
    uv_index = uv_index.reshape(-1, 3)
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in uvs:
            fh.write(f"vt {t[0]:.9g} {t[1]:.9g}\n")
        for tri, uvi in zip(mesh.triangles, uv_index):
            fh.write("f " + " ".join(f"{a + 1}/{b + 1}" for a, b in zip(tri, uvi)) + "\n")

    write_atl(_sidecar(path, "shape", "atl"), mesh.shape_basis)
    write_atl(_sidecar(path, "pose", "atl"), mesh.pose_basis)
    write_atl(_sidecar(path, "expr", "atl"), mesh.expr_basis)
    write_atl(_sidecar(path, "skin", "atl"), mesh.skin_weights)
    write_atl(_sidecar(path, "jreg", "atl"), mesh.joint_regressor)
    write_atl(_sidecar(path, "parents", "atl"), mesh.joint_parents.astype(np.float32))

    with open(_sidecar(path, "regions", "txt"), "w") as fh:
        for i, tag in enumerate(mesh.region_labels):
            fh.write(f"{i} {tag}\n")

    manifest = {
        "v": str(mesh.n_vertices),
        "f": str(mesh.n_triangles),
        "joints": str(mesh.n_joints),
        "mirror_symmetric": "true" if mesh.mirror_symmetric else "false",
    }
    if extra_manifest:
        manifest.update({k: str(v) for k, v in extra_manifest.items()})
    write_manifest(_sidecar(path, "manifest", "txt"), manifest)
    return manifest


def read_manifest(path):
    if not os.path.exists(path):
        return {}
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError("expected 'key = value'", lineno)
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def write_manifest(path, entries):
    with open(path, "w") as fh:
        for key in sorted(entries):
            fh.write(f"{key} = {entries[key]}\n")
