"""Direct inverse-rendering fit of the attribute maps against a synthetic
scene: adaptive-moment updates on the raw maps with one training camera per
iteration (round-robin), the full regularizer suite, and a per-iteration
loss history. Deterministic given seed and thread count."""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from uvsplat.errors import NumericalError
from uvsplat.geometry.atlas import build_uv_atlas, region_mask
from uvsplat.gsmap import AttributeMaps, SCALE, default_sample_grid
from uvsplat.fit.optim import AdamState
from uvsplat.objective import LossWeights, ObjectiveEvaluator


@dataclass
class FitResult:
    maps: AttributeMaps
    history: List = field(default_factory=list)
    atlas: object = None
    grid: object = None
    evaluator: object = None
    aborted: bool = False


def init_maps(atlas, dense_w, init_scale_factor=0.5):
    """Zero raw maps except the scale channel, which starts at a world size
    of ``init_scale_factor`` grid spacings (raw = log(f / dense_w), since the
    relative-scale map already carries the UV-to-3D factor)."""
    maps = AttributeMaps.zeros(atlas.k)
    maps.raw[:, :, SCALE] = math.log(init_scale_factor / dense_w)
    return maps


def make_evaluator(scene, cfg, weights=None):
    """Build the fit-resolution atlas/grid over the scene mesh plus the
    objective evaluator bound to the training cameras."""
    atlas = build_uv_atlas(scene.mesh, cfg.k)
    grid = default_sample_grid(atlas, dense=(cfg.dense_w, cfg.dense_h),
                               hair=(cfg.hair_w, cfg.hair_h),
                               include_vertices=cfg.include_vertices)
    if weights is None:
        weights = LossWeights.from_config(cfg)
    eyes = region_mask(atlas, "left_eye") | region_mask(atlas, "right_eye") \
        if "left_eye" in atlas.region_masks else None
    evaluator = ObjectiveEvaluator(
        atlas=atlas, verts=scene.mesh.vertices, grid=grid,
        cameras=scene.cameras, target_rgb=scene.target_rgb,
        target_alpha=scene.target_alpha, weights=weights, box=scene.box,
        eye_mask=eyes, threads=cfg.threads)
    return atlas, grid, evaluator


def fit(scene, cfg, weights=None, progress=None):
    """Optimize raw maps + shape offsets against the scene targets.

    The surface-coverage TV, eye TV and shape-TV terms switch on after
    ``reg_warmup_frac`` of the iterations (photometrics have to rough in a
    surface before the coverage regularizer has something meaningful to
    smooth). Divergence (non-finite total) aborts with the last good state
    preserved in the result (``aborted=True``). ``progress`` is an optional
    callback ``(iteration, report, maps)``.
    """
    import dataclasses

    atlas, grid, evaluator = make_evaluator(scene, cfg, weights)
    full_weights = evaluator.weights
    warmup_weights = dataclasses.replace(full_weights, lambda_3d=0.0,
                                         lambda_eye=0.0, lambda_shape_tv=0.0)
    warmup_until = int(cfg.reg_warmup_frac * cfg.iterations)

    maps = init_maps(atlas, cfg.dense_w, cfg.init_scale_factor)
    params = {"raw": maps.raw, "shape_offset": maps.shape_offset}
    adam = AdamState(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    history = []
    n_cams = len(scene.cameras)
    last_good = AttributeMaps(maps.raw.copy(), maps.shape_offset.copy())
    for it in range(cfg.iterations):
        cam = it % n_cams
        evaluator.weights = warmup_weights if it < warmup_until else full_weights
        try:
            report, grads, _ = evaluator.evaluate(maps, [cam])
        except NumericalError:
            return FitResult(maps=last_good, history=history, atlas=atlas,
                             grid=grid, evaluator=evaluator, aborted=True)
        history.append((it, report))
        last_good.raw[...] = maps.raw
        last_good.shape_offset[...] = maps.shape_offset
        adam.step(params, {"raw": grads.raw,
                           "shape_offset": grads.shape_offset})
        # keep the offset map inert on invalid texels
        maps.shape_offset[~atlas.valid] = 0.0
        if progress is not None:
            progress(it, report, maps)
    return FitResult(maps=maps, history=history, atlas=atlas, grid=grid,
                     evaluator=evaluator, aborted=False)


def history_csv(history):
    lines = ["iter,term,value"]
    for it, report in history:
        lines.extend(report.csv_rows(it))
    return "\n".join(lines) + "\n"
