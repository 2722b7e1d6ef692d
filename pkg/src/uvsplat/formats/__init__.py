from uvsplat.formats.atl import read_atl, write_atl
from uvsplat.formats.imgio import read_pgm, read_ppm, write_pgm, write_ppm
from uvsplat.formats.points import write_points

__all__ = [
    "read_atl",
    "write_atl",
    "read_ppm",
    "write_ppm",
    "read_pgm",
    "write_pgm",
    "write_points",
]
