"""Plain-text ``key = value`` configuration with strict key checking.

Defaults follow the reference operating point: 256x256 attribute maps,
window 7, 4 feature scales, shape-offset threshold 0.1, and regularizer
weights (50, 5, 1, 1, 10).
"""

import dataclasses
from dataclasses import dataclass

from uvsplat.errors import FormatError


@dataclass
class Config:
    # geometry / sampling
    k: int = 256                  # attribute-map resolution per side
    dense_w: int = 256
    dense_h: int = 256
    hair_w: int = 1024
    hair_h: int = 128
    include_vertices: bool = True
    # fusion
    window: int = 7
    scales: int = 4
    attn_layers: int = 2
    feature_channels: int = 8
    theta_occ: float = 0.5
    tau_depth: float = 0.01
    # objective
    epsilon: float = 0.1          # shape-offset hinge threshold
    delta_alpha: float = 1e-3     # alpha clamp floor in the TV quotient
    alpha_floor: float = 0.05     # TV mask threshold on rendered alpha
    lambda_3d: float = 50.0
    lambda_eye: float = 5.0
    lambda_pos: float = 1.0
    lambda_shape: float = 1.0
    lambda_shape_tv: float = 10.0
    lambda_photo: float = 1.0
    lambda_alpha: float = 1.0
    # fitting
    iterations: int = 800
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    reg_warmup_frac: float = 0.2  # late regularizers start after this fraction
    init_scale_factor: float = 0.5   # initial world scale as a fraction of grid spacing
    resolution: int = 128
    cameras: int = 8
    seed: int = 0
    threads: int = 1

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)


_FIELDS = {f.name: f.type for f in dataclasses.fields(Config)}


def _parse_value(key, raw, line):
    kind = _FIELDS[key]
    if kind == "bool" or kind is bool:
        if raw == "true":
            return True
        if raw == "false":
            return False
        raise FormatError(f"key '{key}' wants true/false, got '{raw}'", line)
    try:
        if kind == "int" or kind is int:
            return int(raw)
        return float(raw)
    except ValueError:
        raise FormatError(f"key '{key}' has malformed value '{raw}'", line) from None


def parse_config(text):
    """Parse ``key = value`` lines ('#' comments) into a Config.

    Unknown keys are rejected with the offending line number.
    """
    values = {}
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"expected 'key = value', got '{line}'", lineno)
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _FIELDS:
            raise FormatError(f"unknown key '{key}'", lineno)
        values[key] = _parse_value(key, raw, lineno)
    return Config(**values)


def serialize_config(cfg):
    lines = []
    for name in sorted(_FIELDS):
        value = getattr(cfg, name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def save_config(path, cfg):
    with open(path, "w") as fh:
        fh.write(serialize_config(cfg))
