"""Plain-text Gaussian point export for external viewers.

One primitive per line: ``x y z qw qx qy qz sx sy sz o r g b``.
"""

import numpy as np


def write_points(path, gaussians):
    pos = np.asarray(gaussians.position)
    rot = np.asarray(gaussians.rotation)
    scale = np.asarray(gaussians.scale)
    opac = np.asarray(gaussians.opacity).reshape(-1)
    color = np.asarray(gaussians.color)
    rows = np.column_stack([pos, rot, scale, opac, color])
    with open(path, "w") as fh:
        for row in rows:
            fh.write(" ".join(f"{v:.9g}" for v in row) + "\n")
    return rows.shape[0]
