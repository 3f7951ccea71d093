"""Numerical laboratory for horizontal-like maps of C^k.

Modules follow the objects they compute: ``geometry`` (product domains),
``maps`` (the map zoo), ``structure`` (certification and main degree),
``green`` (Green functions), ``currents`` and ``equilibrium`` (k=2 grid
potentials and the equilibrium measure), ``ergodic`` (Lyapunov, entropy,
mixing), ``degrees`` (dynamical degrees) and ``cli``.
"""

from horizon.errors import (
    DimensionError,
    HorizonError,
    InverseConvergenceError,
    ResolutionError,
)
from horizon.geometry import Domain, Factor
from horizon.maps import (
    DiagonalMap,
    HenonMap,
    IteratedMap,
    MapSpec,
    PerturbedMap,
    ProductMap,
    RegularAutomorphism,
    decoupled_model,
    make_product,
)

__version__ = "0.1.0"

__all__ = [
    "DiagonalMap",
    "DimensionError",
    "Domain",
    "Factor",
    "HenonMap",
    "HorizonError",
    "InverseConvergenceError",
    "IteratedMap",
    "MapSpec",
    "PerturbedMap",
    "ProductMap",
    "RegularAutomorphism",
    "ResolutionError",
    "decoupled_model",
    "make_product",
]
