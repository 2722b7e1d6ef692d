from uvsplat.geometry.atlas import (
    UvAtlas,
    build_uv_atlas,
    position_map,
    region_mask,
    tangent_frames,
)
from uvsplat.geometry.mesh import HeadMesh, PoseParams, deform
from uvsplat.geometry.objio import load_mesh, save_mesh
from uvsplat.geometry.prochead import make_head_mesh

__all__ = [
    "HeadMesh",
    "PoseParams",
    "deform",
    "UvAtlas",
    "build_uv_atlas",
    "position_map",
    "tangent_frames",
    "region_mask",
    "load_mesh",
    "save_mesh",
    "make_head_mesh",
]
