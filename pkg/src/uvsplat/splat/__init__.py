"""Differentiable tile-based splatting with a compiled core and a numpy
fallback, selected at import. Set ``UVSPLAT_BACKEND=python`` (or
``compiled``/``auto``) to override the default."""

import os

from uvsplat.splat import raster_py
from uvsplat.splat import render as _render_mod
from uvsplat.splat.camera import Camera, load_cameras, save_cameras
from uvsplat.splat.project import ProjectedSplats, backprop_projection, project
from uvsplat.splat.render import (
    RenderOutput,
    SplatGrads,
    default_box,
    position_unit_channels,
    rasterize,
    register_backend,
    render_override,
)

register_backend("python", raster_py)
try:
    from uvsplat.splat import _kernels  # compiled extension, may be absent
    register_backend("compiled", _kernels)
    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False

_env = os.environ.get("UVSPLAT_BACKEND")
_render_mod.set_default_backend(_env if _env else "auto")


def default_backend():
    name, _ = _render_mod._resolve_backend(None)
    return name


__all__ = [
    "Camera",
    "save_cameras",
    "load_cameras",
    "ProjectedSplats",
    "project",
    "backprop_projection",
    "RenderOutput",
    "SplatGrads",
    "rasterize",
    "render_override",
    "position_unit_channels",
    "default_box",
    "register_backend",
    "HAVE_COMPILED",
    "default_backend",
]
