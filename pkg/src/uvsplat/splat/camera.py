"""Pinhole camera: looks down +z in camera space, image x right, y down."""

from dataclasses import dataclass

import numpy as np

from uvsplat.errors import ValidationError


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray      # (3, 3) world -> camera rotation
    t: np.ndarray      # (3,) translation
    width: int
    height: int

    def validate(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if not np.allclose(self.R.T @ self.R, np.eye(3), atol=1e-6):
            raise ValidationError("camera rotation is not orthonormal")
        return self

    def world_to_cam(self, points):
        return points @ self.R.T + self.t

    @classmethod
    def orbit(cls, azimuth_deg, elevation_deg, distance, target=(0.0, 0.0, 0.0),
              fov_deg=45.0, width=256, height=256):
        """Camera on a sphere around ``target``, azimuth 0 on the +z axis."""
        target = np.asarray(target, dtype=np.float64)
        az = np.radians(azimuth_deg)
        el = np.radians(elevation_deg)
        eye = target + distance * np.array(
            [np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)])
        forward = target - eye
        forward /= np.linalg.norm(forward)
        up = np.array([0.0, 1.0, 0.0])
        x_c = np.cross(forward, up)
        n = np.linalg.norm(x_c)
        if n < 1e-9:
            raise ValidationError("orbit camera looking straight along the up axis")
        x_c /= n
        y_c = np.cross(forward, x_c)
        R = np.stack([x_c, y_c, forward])
        t = -R @ eye
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2.0)
        return cls(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                   R=R, t=t, width=width, height=height).validate()

    def to_row(self):
        return np.concatenate([[self.fx, self.fy, self.cx, self.cy,
                                self.width, self.height],
                               self.R.reshape(-1), self.t])

    @classmethod
    def from_row(cls, row):
        row = np.asarray(row, dtype=np.float64)
        if row.size != 18:
            raise ValidationError(f"camera row wants 18 numbers, got {row.size}")
        return cls(fx=row[0], fy=row[1], cx=row[2], cy=row[3],
                   R=row[6:15].reshape(3, 3).copy(), t=row[15:18].copy(),
                   width=int(row[4]), height=int(row[5])).validate()


def save_cameras(path, cameras):
    rows = np.stack([c.to_row() for c in cameras])
    with open(path, "w") as fh:
        fh.write("# fx fy cx cy width height R(9, row-major) t(3)\n")
        for row in rows:
            fh.write(" ".join(f"{v!r}" for v in row) + "\n")


def load_cameras(path):
    cams = []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            cams.append(Camera.from_row([float(x) for x in line.split()]))
    return cams
