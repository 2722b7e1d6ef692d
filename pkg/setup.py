"""Build script for the optional compiled rasterizer kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a failed native build downgrades to a warning instead of
aborting the install.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible; warn and continue otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            print(f"warning: compiled kernels not built ({exc}); "
                  "falling back to the pure-python rasterizer", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: skipping {ext.name}: {exc}", file=sys.stderr)


def extensions():
    from Cython.Build import cythonize

    openmp_args = [] if sys.platform == "darwin" else ["-fopenmp"]
    ext = Extension(
        "uvsplat.splat._kernels",
        ["src/uvsplat/splat/_kernels.pyx"],
        extra_compile_args=["-O3"] + openmp_args,
        extra_link_args=list(openmp_args),
    )
    return cythonize([ext], language_level=3,
                     compiler_directives={"boundscheck": False,
                                          "wraparound": False,
                                          "cdivision": True})


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
