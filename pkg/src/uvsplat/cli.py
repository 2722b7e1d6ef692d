"""Command-line surface tying the pipeline together.

Subcommands: ``synth`` (build a synthetic scene), ``fit`` (optimize maps
against a scene), ``render`` / ``turntable`` / ``animate`` (draw fitted
maps), ``fuse`` (run the symmetric fusion stack on a source view),
``gradcheck`` (finite-difference suite) and ``perf`` (rasterizer timing).

Every command writes a manifest of its inputs and the library version.
Exit codes: 0 success, 1 validation/format error, 2 numerical failure.
"""

import argparse
import os
import sys
import time

import numpy as np

import uvsplat
from uvsplat.config import Config, load_config, save_config
from uvsplat.errors import FormatError, NumericalError, UvsplatError, ValidationError
from uvsplat.formats.atl import write_atl
from uvsplat.formats.imgio import write_pgm, write_ppm
from uvsplat.formats.points import write_points
from uvsplat.fit.gradcheck import run_gradcheck
from uvsplat.fit.loop import fit, history_csv
from uvsplat.fit.scene import load_scene, make_synthetic, save_scene
from uvsplat.geometry.atlas import build_uv_atlas, position_map
from uvsplat.geometry.mesh import PoseParams
from uvsplat.geometry.objio import read_manifest, write_manifest
from uvsplat.gsmap import AttributeMaps, animate as animate_maps, default_sample_grid, sample_gaussians
from uvsplat.objective import LossWeights
from uvsplat.splat import Camera, default_backend, project, rasterize, render_override
from uvsplat import fuse as fuse_mod


def _write_cmd_manifest(out_dir, command, inputs):
    entries = {"command": command, "version": uvsplat.__version__}
    entries.update({k: str(v) for k, v in inputs.items()})
    write_manifest(os.path.join(out_dir, "manifest.txt"), entries)


def _load_camera_spec(path):
    spec = read_manifest(path)
    if not spec:
        raise ValidationError(f"{path}: empty camera spec")
    target = tuple(float(x) for x in spec.get("target", "0 0 0").split())
    return Camera.orbit(
        azimuth_deg=float(spec.get("azimuth", 0.0)),
        elevation_deg=float(spec.get("elevation", 10.0)),
        distance=float(spec.get("distance", 2.6)),
        target=target,
        fov_deg=float(spec.get("fov", 40.0)),
        width=int(spec.get("width", 256)),
        height=int(spec.get("height", 256)))


def _load_pose_rows(path, mesh):
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(x) for x in line.replace(",", " ").split()]
            want = mesh.n_beta + 3 * mesh.n_joints + mesh.n_psi
            if len(vals) != want:
                raise FormatError(
                    f"pose row has {len(vals)} values, mesh wants {want}", lineno)
            beta = np.array(vals[:mesh.n_beta])
            theta = np.array(vals[mesh.n_beta:mesh.n_beta + 3 * mesh.n_joints])
            psi = np.array(vals[mesh.n_beta + 3 * mesh.n_joints:])
            rows.append(PoseParams(beta=beta, theta=theta, psi=psi))
    if not rows:
        raise FormatError(f"{path}: no pose rows")
    return rows


def _scene_context(scene_dir, maps_path, cfg):
    scene = load_scene(scene_dir)
    maps = AttributeMaps.load(maps_path)
    atlas = build_uv_atlas(scene.mesh, maps.k)
    grid = default_sample_grid(atlas, dense=(cfg.dense_w, cfg.dense_h),
                               hair=(cfg.hair_w, cfg.hair_h),
                               include_vertices=cfg.include_vertices)
    return scene, maps, atlas, grid


def _save_render(render, out_path, float_dump=None):
    rgb = render.rgb
    if rgb.shape[2] == 2:  # UV channels: pad for the 3-channel image format
        rgb = np.concatenate([rgb, np.zeros(rgb.shape[:2] + (1,))], axis=2)
    write_ppm(out_path, rgb)
    stem = os.path.splitext(out_path)[0]
    write_pgm(stem + "_alpha.pgm", render.alpha)
    if float_dump:
        write_atl(float_dump, render.rgb)


def cmd_synth(args):
    scene = make_synthetic(seed=args.seed, resolution=args.res,
                           n_cameras=args.cameras, threads=args.threads)
    save_scene(scene, args.out_dir)
    _write_cmd_manifest(args.out_dir, "synth",
                        {"seed": args.seed, "res": args.res,
                         "cameras": args.cameras})
    print(f"scene written to {args.out_dir} "
          f"({len(scene.cameras)} train + {len(scene.holdout_cameras)} holdout views)")
    return 0


def cmd_fit(args):
    cfg = load_config(args.config) if args.config else Config()
    if args.threads is not None:
        cfg = cfg.replace(threads=args.threads)
    scene = load_scene(args.scene)
    os.makedirs(args.out_dir, exist_ok=True)

    checkpoints = []

    def progress(it, report, maps):
        if args.checkpoint_every and (it + 1) % args.checkpoint_every == 0:
            checkpoints.append(it)
            _turntable_frames(scene, maps, cfg, 4,
                              os.path.join(args.out_dir, f"ckpt_{it + 1:05d}"))
        if args.verbose and it % 50 == 0:
            print(f"iter {it}: total={report.total:.5f}", flush=True)

    result = fit(scene, cfg, progress=progress)
    result.maps.save(os.path.join(args.out_dir, "maps.atl"))
    with open(os.path.join(args.out_dir, "history.csv"), "w") as fh:
        fh.write(history_csv(result.history))
    save_config(os.path.join(args.out_dir, "config.txt"), cfg)
    _write_cmd_manifest(args.out_dir, "fit",
                        {"scene": args.scene, "config": args.config or "(defaults)",
                         "seed": cfg.seed, "iterations": cfg.iterations,
                         "aborted": result.aborted})
    if result.aborted:
        print("fit diverged; last good state saved", file=sys.stderr)
        raise NumericalError("fit diverged")
    print(f"fit complete: {len(result.history)} iterations, "
          f"final total {result.history[-1][1].total:.5f}" if result.history
          else "fit complete (0 iterations)")
    return 0


def _turntable_frames(scene, maps, cfg, frames, out_dir, res=None):
    os.makedirs(out_dir, exist_ok=True)
    atlas = build_uv_atlas(scene.mesh, maps.k)
    grid = default_sample_grid(atlas, dense=(cfg.dense_w, cfg.dense_h),
                               hair=(cfg.hair_w, cfg.hair_h),
                               include_vertices=cfg.include_vertices)
    g = sample_gaussians(maps, atlas, grid, scene.mesh.vertices).gaussians
    res = res or scene.resolution
    for i in range(frames):
        cam = Camera.orbit(i * 360.0 / frames, 12.0, 2.6, fov_deg=40.0,
                           width=res, height=res)
        out = rasterize(project(g, cam), g.color, cam, background=0.0,
                        threads=cfg.threads)
        write_ppm(os.path.join(out_dir, f"frame_{i:03d}.ppm"), out.rgb)
    return frames


def cmd_render(args):
    cfg = load_config(args.config) if args.config else Config()
    scene, maps, atlas, grid = _scene_context(args.scene, args.maps, cfg)
    cam = _load_camera_spec(args.camera)
    if args.pose:
        pose = _load_pose_rows(args.pose, scene.mesh)[0]
        g = animate_maps(maps, atlas, grid, scene.mesh, pose).gaussians
    else:
        g = sample_gaussians(maps, atlas, grid, scene.mesh.vertices).gaussians
    mode = {"color": "color", "i3d": "position_unit", "iuv": "uv"}[args.mode]
    box = scene.box if mode == "position_unit" else None
    render = render_override(g, mode, cam, box=box, threads=cfg.threads)
    _save_render(render, args.out, float_dump=args.float_dump)
    _write_cmd_manifest(os.path.dirname(os.path.abspath(args.out)) or ".",
                        "render", {"maps": args.maps, "scene": args.scene,
                                   "mode": args.mode, "camera": args.camera,
                                   "pose": args.pose or "(canonical)"})
    print(f"wrote {args.out}")
    return 0


def cmd_turntable(args):
    cfg = load_config(args.config) if args.config else Config()
    scene, maps, atlas, grid = _scene_context(args.scene, args.maps, cfg)
    g = sample_gaussians(maps, atlas, grid, scene.mesh.vertices).gaussians
    os.makedirs(args.out_dir, exist_ok=True)
    res = args.res or scene.resolution
    for i in range(args.frames):
        az = i * 360.0 / args.frames
        cam = Camera.orbit(az, 12.0, 2.6, fov_deg=40.0, width=res, height=res)
        out = rasterize(project(g, cam), g.color, cam, background=0.0,
                        threads=cfg.threads)
        write_ppm(os.path.join(args.out_dir, f"frame_{i:03d}.ppm"), out.rgb)
    _write_cmd_manifest(args.out_dir, "turntable",
                        {"maps": args.maps, "scene": args.scene,
                         "frames": args.frames,
                         "azimuths_deg": " ".join(
                             f"{i * 360.0 / args.frames:g}" for i in range(args.frames))})
    print(f"wrote {args.frames} frames to {args.out_dir}")
    return 0


def cmd_animate(args):
    cfg = load_config(args.config) if args.config else Config()
    scene, maps, atlas, grid = _scene_context(args.scene, args.maps, cfg)
    cam = _load_camera_spec(args.camera)
    poses = _load_pose_rows(args.pose_sequence, scene.mesh)
    os.makedirs(args.out_dir, exist_ok=True)
    for i, pose in enumerate(poses):
        g = animate_maps(maps, atlas, grid, scene.mesh, pose).gaussians
        out = rasterize(project(g, cam), g.color, cam, background=0.0,
                        threads=cfg.threads)
        write_ppm(os.path.join(args.out_dir, f"frame_{i:03d}.ppm"), out.rgb)
    _write_cmd_manifest(args.out_dir, "animate",
                        {"maps": args.maps, "scene": args.scene,
                         "pose_sequence": args.pose_sequence,
                         "frames": len(poses)})
    print(f"animated {len(poses)} frames to {args.out_dir}")
    return 0


def cmd_fuse(args):
    cfg = load_config(args.config) if args.config else Config()
    scene = load_scene(args.scene)
    atlas = build_uv_atlas(scene.mesh, cfg.k) if scene.atlas.k != cfg.k \
        else scene.atlas
    cam = scene.cameras[args.camera_index]
    source = scene.target_rgb[args.camera_index]
    p_r = position_map(atlas, scene.mesh.vertices)
    m_v = fuse_mod.visibility_mask(p_r, atlas.valid, scene.mesh.vertices,
                                   scene.mesh.triangles, cam, cfg.tau_depth)
    f_l = fuse_mod.sample_local_features(source, p_r, atlas.valid, cam, m_v)
    f_g = fuse_mod.synthesize_global_features(atlas, f_l.channels, seed=cfg.seed)
    levels = fuse_mod.fuse_stack(f_g, f_l, m_v, atlas, n_scales=cfg.scales,
                                 window=cfg.window, layers=cfg.attn_layers,
                                 theta_occ=cfg.theta_occ, seed=cfg.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    for lv in levels:
        k = lv.f_f.k
        write_atl(os.path.join(args.out_dir, f"f_f_{k}.atl"), lv.f_f.data)
        if args.dump_fusion:
            write_atl(os.path.join(args.out_dir, f"f_g_{k}.atl"), lv.f_g.data)
            write_atl(os.path.join(args.out_dir, f"f_l_{k}.atl"), lv.f_l.data)
            write_atl(os.path.join(args.out_dir, f"m_v_{k}.atl"), lv.m_v.values)
            write_atl(os.path.join(args.out_dir, f"f_c_{k}.atl"), lv.f_c.data)
            write_atl(os.path.join(args.out_dir, f"m_o_{k}.atl"), lv.m_o.values)
            write_atl(os.path.join(args.out_dir, f"f_m_{k}.atl"), lv.f_m.data)
    _write_cmd_manifest(args.out_dir, "fuse",
                        {"scene": args.scene, "camera_index": args.camera_index,
                         "scales": cfg.scales, "window": cfg.window,
                         "dump_fusion": args.dump_fusion})
    print(f"fusion intermediates written to {args.out_dir}")
    return 0


def cmd_gradcheck(args):
    cfg = load_config(args.config) if args.config else Config()
    weights = LossWeights.from_config(cfg)
    passed, results = run_gradcheck(samples=args.samples, seed=cfg.seed,
                                    threads=cfg.threads, weights=weights)
    worst = 0.0
    for term, ck in sorted(results.items()):
        print(f"{term:10s} checked={ck.checked:4d} failed={ck.failed:3d} "
              f"kinks_skipped={ck.skipped_kinks:3d} max_abs={ck.max_abs:.3e} "
              f"max_rel={ck.max_rel:.3e}")
        worst = max(worst, ck.max_rel)
    print(f"max relative error: {worst:.4e} (threshold 1e-2)")
    print("gradcheck PASS" if passed else "gradcheck FAIL")
    if not passed:
        raise NumericalError("gradient check failed")
    return 0


def cmd_perf(args):
    from uvsplat.splat.render import _inverse_cov, _sort_and_bin  # timing hooks
    rng = np.random.default_rng(0)
    n = args.gaussians
    from uvsplat.gsmap import GaussianSet
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    g = GaussianSet(position=rng.normal(0, 0.35, (n, 3)), rotation=rot,
                    scale=rng.uniform(0.004, 0.012, (n, 3)),
                    opacity=rng.uniform(0.3, 0.95, n),
                    color=rng.uniform(0, 1, (n, 3)),
                    rig_uv=rng.uniform(0, 1, (n, 2)),
                    rig_tri=np.zeros(n, dtype=np.int64))
    t_proj = t_sort = t_comp = 0.0
    frames = args.frames
    backend = args.backend
    t_all = time.perf_counter()
    for i in range(frames):
        cam = Camera.orbit(i * 360.0 / frames, 10.0, 2.6,
                           width=args.res, height=args.res)
        t0 = time.perf_counter()
        splats = project(g, cam)
        t1 = time.perf_counter()
        qcov, radius = _inverse_cov(splats.cov2)
        order, mean_s, pair_splat, ts, te = _sort_and_bin(
            splats.mean2, splats.depth, radius, cam.width, cam.height)
        t2 = time.perf_counter()
        out = rasterize(splats, g.color, cam, background=0.0,
                        threads=args.threads, backend=backend)
        t3 = time.perf_counter()
        t_proj += t1 - t0
        t_sort += t2 - t1
        t_comp += t3 - t2
    wall = time.perf_counter() - t_all
    fps = frames / wall
    print(f"backend={backend or default_backend()} gaussians={n} "
          f"res={args.res} threads={args.threads} frames={frames}")
    print(f"per-stage mean: project {1e3 * t_proj / frames:.2f} ms | "
          f"sort+bin {1e3 * t_sort / frames:.2f} ms | "
          f"composite(+bin) {1e3 * t_comp / frames:.2f} ms")
    print(f"mean FPS over {frames} frames: {fps:.2f}")
    print("not comparable to paper Tab. 3 (GPU)")
    return 0


def cmd_export_points(args):
    cfg = load_config(args.config) if args.config else Config()
    scene, maps, atlas, grid = _scene_context(args.scene, args.maps, cfg)
    g = sample_gaussians(maps, atlas, grid, scene.mesh.vertices).gaussians
    n = write_points(args.out, g)
    print(f"wrote {n} points to {args.out}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def build_parser():
    p = _Parser(prog="uvsplat", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic multi-view scene")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--res", type=int, default=128)
    s.add_argument("--cameras", type=int, default=8)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("fit", help="fit attribute maps to a scene")
    s.add_argument("--config")
    s.add_argument("--scene", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--checkpoint-every", type=int, default=0)
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("render", help="render fitted maps")
    s.add_argument("--maps", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--pose")
    s.add_argument("--camera", required=True)
    s.add_argument("--mode", choices=("color", "i3d", "iuv"), default="color")
    s.add_argument("--out", required=True)
    s.add_argument("--float-dump")
    s.add_argument("--config")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("turntable", help="render a ring of views")
    s.add_argument("--maps", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--frames", type=int, default=8)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--res", type=int, default=None)
    s.add_argument("--config")
    s.set_defaults(func=cmd_turntable)

    s = sub.add_parser("animate", help="render a pose sequence")
    s.add_argument("--maps", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--pose-sequence", required=True)
    s.add_argument("--camera", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_animate)

    s = sub.add_parser("fuse", help="run the symmetric fusion stack")
    s.add_argument("--scene", required=True)
    s.add_argument("--camera-index", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--dump-fusion", action="store_true")
    s.add_argument("--config")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--config")
    s.add_argument("--samples", type=int, default=550)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("perf", help="rasterizer throughput report")
    s.add_argument("--gaussians", type=int, default=78000)
    s.add_argument("--res", type=int, default=256)
    s.add_argument("--threads", type=int, default=8)
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--backend", default=None)
    s.set_defaults(func=cmd_perf)

    s = sub.add_parser("export-points", help="dump Gaussians as text points")
    s.add_argument("--maps", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_export_points)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ValidationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except UvsplatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
