"""UV-space rigged Gaussian head avatars on the CPU.

Pipeline: a parametric head mesh (blendshapes + linear blend skinning) is
flattened into a UV atlas; Gaussian primitives are sampled from UV attribute
maps, rigged to the surface, splatted with a differentiable tile-based
rasterizer, and fitted to multi-view targets under a total-variation-heavy
regularizer suite.
"""

__version__ = "0.1.0"

from uvsplat.errors import (
    ContractError,
    FormatError,
    NumericalError,
    UvsplatError,
    ValidationError,
)

__all__ = [
    "__version__",
    "UvsplatError",
    "ValidationError",
    "FormatError",
    "ContractError",
    "NumericalError",
]
