from uvsplat.fit.loop import FitResult, fit, init_maps
from uvsplat.fit.metrics import hole_metric, psnr, silhouette_iou
from uvsplat.fit.optim import AdamState
from uvsplat.fit.scene import SyntheticScene, load_scene, make_synthetic, save_scene

__all__ = [
    "fit",
    "init_maps",
    "FitResult",
    "AdamState",
    "SyntheticScene",
    "make_synthetic",
    "save_scene",
    "load_scene",
    "hole_metric",
    "psnr",
    "silhouette_iou",
]
