"""Binary PPM (P6) / PGM (P5) image IO with naive 8-bit quantization."""

import numpy as np

from uvsplat.errors import FormatError


def _quantize(img):
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, rgb):
    """Write an H x W x 3 float image in [0, 1] as binary P6, maxval 255."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise FormatError(f"PPM wants HxWx3, got shape {rgb.shape}")
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_quantize(rgb).tobytes())


def write_pgm(path, gray):
    """Write an H x W float image in [0, 1] as binary P5, maxval 255."""
    gray = np.asarray(gray)
    if gray.ndim == 3 and gray.shape[2] == 1:
        gray = gray[:, :, 0]
    if gray.ndim != 2:
        raise FormatError(f"PGM wants HxW, got shape {gray.shape}")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_quantize(gray).tobytes())


def _read_pnm(path, magic, channels):
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens = []
    pos = 0
    # header = 4 whitespace-separated tokens, '#' comments allowed
    while len(tokens) < 4 and pos < len(blob):
        if blob[pos:pos + 1].isspace():
            pos += 1
            continue
        if blob[pos:pos + 1] == b"#":
            nl = blob.find(b"\n", pos)
            pos = len(blob) if nl < 0 else nl + 1
            continue
        end = pos
        while end < len(blob) and not blob[end:end + 1].isspace():
            end += 1
        tokens.append(blob[pos:end])
        pos = end
    if len(tokens) < 4 or tokens[0] != magic:
        raise FormatError(f"{path}: not a {magic.decode()} file")
    w, h, maxval = (int(t) for t in tokens[1:4])
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported")
    pos += 1  # single whitespace byte after maxval
    data = np.frombuffer(blob, dtype=np.uint8, offset=pos,
                         count=w * h * channels)
    if data.size != w * h * channels:
        raise FormatError(f"{path}: truncated pixel data")
    return data.astype(np.float64).reshape(h, w, channels) / 255.0


def read_ppm(path):
    """Read binary P6 into H x W x 3 float64 in [0, 1]."""
    return _read_pnm(path, b"P6", 3)


def read_pgm(path):
    """Read binary P5 into H x W float64 in [0, 1]."""
    return _read_pnm(path, b"P5", 1)[:, :, 0]
