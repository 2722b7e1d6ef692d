"""Reconstruction metrics: PSNR, silhouette IoU and the hole fraction."""

import math

import numpy as np

from uvsplat.errors import ValidationError
from uvsplat.splat.project import project
from uvsplat.splat.render import rasterize


def psnr(img, ref):
    """Peak-1 PSNR in dB; identical images report +inf."""
    img = np.asarray(img, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if img.shape != ref.shape:
        raise ValidationError(f"shape mismatch {img.shape} vs {ref.shape}")
    mse = float(((img - ref) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def silhouette_iou(alpha, ref_alpha, threshold=0.5):
    a = np.asarray(alpha) > threshold
    b = np.asarray(ref_alpha) > threshold
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def render_alphas(gaussians, cameras, threads=1, backend=None):
    alphas = []
    for cam in cameras:
        splats = project(gaussians, cam)
        out = rasterize(splats, gaussians.color, cam, background=0.0,
                        threads=threads, backend=backend)
        alphas.append(out.alpha)
    return alphas


def hole_metric(gaussians, cameras, target_alphas, threads=1, backend=None):
    """Fraction of silhouette-interior pixels (target alpha > 0.5) whose
    rendered alpha falls below 0.5, averaged over the cameras."""
    if len(gaussians) == 0:
        for t in target_alphas:
            if not (t > 0.5).any():
                raise ValidationError("empty ground-truth silhouette")
        return 1.0
    fracs = []
    alphas = render_alphas(gaussians, cameras, threads=threads, backend=backend)
    for alpha, target in zip(alphas, target_alphas):
        inside = target > 0.5
        n_inside = int(inside.sum())
        if n_inside == 0:
            raise ValidationError("empty ground-truth silhouette")
        fracs.append(float((alpha[inside] < 0.5).sum() / n_inside))
    return float(np.mean(fracs))
