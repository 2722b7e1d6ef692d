"""Synthetic multi-view scenes: a textured procedural head rendered by this
library's own rasterizer into training and held-out camera rings.

Ground-truth Gaussians are dense and near-opaque so targets have a closed
surface; the fit then works against a sparser grid. Targets, cameras and the
ground-truth maps serialize to a directory (ATL for exact values, PPM/PGM
for inspection).
"""

import os
from dataclasses import dataclass, field
from typing import List

import numpy as np

from uvsplat.errors import ValidationError
from uvsplat.formats.atl import read_atl, write_atl
from uvsplat.formats.imgio import write_pgm, write_ppm
from uvsplat.geometry.atlas import build_uv_atlas
from uvsplat.geometry.objio import load_mesh, read_manifest, save_mesh, write_manifest
from uvsplat.geometry.prochead import head_texture, make_head_mesh
from uvsplat.gsmap import (
    AttributeMaps,
    OPACITY,
    SCALE,
    COLOR,
    default_sample_grid,
    sample_gaussians,
)
from uvsplat.splat import Camera, load_cameras, save_cameras
from uvsplat.splat.project import project
from uvsplat.splat.render import default_box, rasterize

GT_OPACITY_RAW = 3.5           # logistic(3.5) ~ 0.97
GT_SCALE_FACTOR = 1.4          # world scale as a multiple of grid spacing


@dataclass
class SyntheticScene:
    mesh: object
    atlas: object
    grid: object
    gt_maps: AttributeMaps
    cameras: List[Camera]
    holdout_cameras: List[Camera]
    target_rgb: List[np.ndarray]
    target_alpha: List[np.ndarray]
    holdout_rgb: List[np.ndarray]
    holdout_alpha: List[np.ndarray]
    box: tuple
    seed: int
    resolution: int
    params: dict = field(default_factory=dict)


def _ring(n, elevation, distance, fov, resolution, offset_deg=0.0):
    return [Camera.orbit(offset_deg + i * 360.0 / n, elevation, distance,
                         fov_deg=fov, width=resolution, height=resolution)
            for i in range(n)]


def ground_truth_maps(atlas, seed, dense_w):
    """Raw maps encoding the procedural texture with near-opaque, surface-
    aligned Gaussians sized to the sampling-grid spacing."""
    maps = AttributeMaps.zeros(atlas.k)
    centers = atlas.texel_centers()
    tex = head_texture(centers[..., 0], centers[..., 1], seed)
    maps.raw[:, :, COLOR] = np.log(tex / (1.0 - tex))
    maps.raw[:, :, SCALE] = np.log(GT_SCALE_FACTOR / dense_w)
    maps.raw[:, :, OPACITY] = GT_OPACITY_RAW
    return maps


def make_synthetic(seed=0, resolution=128, n_cameras=8, k=128,
                   dense=(160, 160), hair=(512, 64), include_vertices=True,
                   elevation=12.0, distance=2.6, fov=40.0, threads=1,
                   backend=None):
    """Deterministic synthetic scene; targets self-rendered from dense
    ground-truth Gaussians painted with the procedural texture."""
    mesh = make_head_mesh(seed=seed)
    atlas = build_uv_atlas(mesh, k)
    grid = default_sample_grid(atlas, dense=dense, hair=hair,
                               include_vertices=include_vertices)
    gt_maps = ground_truth_maps(atlas, seed, dense[0])
    sample = sample_gaussians(gt_maps, atlas, grid, mesh.vertices)
    g = sample.gaussians
    box = default_box(g.position)

    cams = _ring(n_cameras, elevation, distance, fov, resolution)
    holdout = _ring(n_cameras, -8.0, distance, fov, resolution,
                    offset_deg=180.0 / n_cameras)

    def render_targets(cam_list):
        rgbs, alphas = [], []
        for cam in cam_list:
            splats = project(g, cam)
            out = rasterize(splats, g.color, cam, background=0.0,
                            threads=threads, backend=backend)
            rgbs.append(out.rgb)
            alphas.append(out.alpha)
        return rgbs, alphas

    t_rgb, t_alpha = render_targets(cams)
    h_rgb, h_alpha = render_targets(holdout)
    return SyntheticScene(
        mesh=mesh, atlas=atlas, grid=grid, gt_maps=gt_maps, cameras=cams,
        holdout_cameras=holdout, target_rgb=t_rgb, target_alpha=t_alpha,
        holdout_rgb=h_rgb, holdout_alpha=h_alpha, box=box, seed=seed,
        resolution=resolution,
        params={"n_cameras": n_cameras, "k": k, "dense_w": dense[0],
                "dense_h": dense[1], "hair_w": hair[0], "hair_h": hair[1],
                "include_vertices": include_vertices, "elevation": elevation,
                "distance": distance, "fov": fov})


def save_scene(scene, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    save_mesh(os.path.join(out_dir, "mesh.obj"), scene.mesh,
              extra_manifest={"seed": scene.seed})
    save_cameras(os.path.join(out_dir, "cameras.txt"), scene.cameras)
    save_cameras(os.path.join(out_dir, "holdout_cameras.txt"),
                 scene.holdout_cameras)
    scene.gt_maps.save(os.path.join(out_dir, "maps_gt.atl"))
    for tag, rgbs, alphas in (("target", scene.target_rgb, scene.target_alpha),
                              ("holdout", scene.holdout_rgb, scene.holdout_alpha)):
        for i, (rgb, alpha) in enumerate(zip(rgbs, alphas)):
            write_atl(os.path.join(out_dir, f"{tag}_{i:02d}.atl"), rgb)
            write_atl(os.path.join(out_dir, f"{tag}_{i:02d}_alpha.atl"), alpha)
            write_ppm(os.path.join(out_dir, f"{tag}_{i:02d}.ppm"), rgb)
            write_pgm(os.path.join(out_dir, f"{tag}_{i:02d}_alpha.pgm"), alpha)
    manifest = {"seed": scene.seed, "resolution": scene.resolution,
                "box_lo": " ".join(repr(float(x)) for x in scene.box[0]),
                "box_hi": " ".join(repr(float(x)) for x in scene.box[1])}
    manifest.update(scene.params)
    write_manifest(os.path.join(out_dir, "scene.txt"),
                   {k: str(v) for k, v in manifest.items()})
    return out_dir


def load_scene(scene_dir):
    manifest = read_manifest(os.path.join(scene_dir, "scene.txt"))
    if not manifest:
        raise ValidationError(f"{scene_dir}: missing scene.txt manifest")
    mesh = load_mesh(os.path.join(scene_dir, "mesh.obj"))
    k = int(manifest["k"])
    atlas = build_uv_atlas(mesh, k)
    grid = default_sample_grid(
        atlas,
        dense=(int(manifest["dense_w"]), int(manifest["dense_h"])),
        hair=(int(manifest["hair_w"]), int(manifest["hair_h"])),
        include_vertices=manifest["include_vertices"] in ("True", "true"))
    cams = load_cameras(os.path.join(scene_dir, "cameras.txt"))
    holdout = load_cameras(os.path.join(scene_dir, "holdout_cameras.txt"))

    def read_targets(tag, count):
        rgbs, alphas = [], []
        for i in range(count):
            rgbs.append(read_atl(
                os.path.join(scene_dir, f"{tag}_{i:02d}.atl")).astype(np.float64))
            alphas.append(read_atl(
                os.path.join(scene_dir, f"{tag}_{i:02d}_alpha.atl")).astype(np.float64))
        return rgbs, alphas

    t_rgb, t_alpha = read_targets("target", len(cams))
    h_rgb, h_alpha = read_targets("holdout", len(holdout))
    box = (np.array([float(x) for x in manifest["box_lo"].split()]),
           np.array([float(x) for x in manifest["box_hi"].split()]))
    return SyntheticScene(
        mesh=mesh, atlas=atlas, grid=grid,
        gt_maps=AttributeMaps.load(os.path.join(scene_dir, "maps_gt.atl")),
        cameras=cams, holdout_cameras=holdout,
        target_rgb=t_rgb, target_alpha=t_alpha,
        holdout_rgb=h_rgb, holdout_alpha=h_alpha,
        box=box, seed=int(manifest["seed"]),
        resolution=int(manifest["resolution"]),
        params={key: manifest[key] for key in
                ("n_cameras", "k", "dense_w", "dense_h", "hair_w", "hair_h",
                 "include_vertices", "elevation", "distance", "fov")
                if key in manifest})
