"""Numerical laboratory for boundary-control reconstruction of a potential in
the 1-D wave equation ``u_tt - u_xx + q u = 0`` from boundary data on the
shortest window ``[0, 2T]``.

Modules
-------
linop      dense operators between uniformly weighted sample spaces
wavesim    forward solver, response operator R^{2T}, control operator W^T
opnest     nests, diagonals, polar decomposition, triangular factorization
tor        the reconstruction pipeline R^{2T} -> C^T -> sqrt(C^T) -> F^T -> V^T -> q
stability  convergence experiments and random-matrix suites
cli        command-line front end
"""

from .errors import (
    BcmtorError,
    ConfigError,
    DataInconsistencyError,
    GridMismatchError,
    InstabilityError,
    InsufficientIlluminationError,
    NotPositiveError,
    NumericalError,
)
from .linop import LinOp, Space

__version__ = "0.1.0"

__all__ = [
    "BcmtorError",
    "ConfigError",
    "DataInconsistencyError",
    "GridMismatchError",
    "InstabilityError",
    "InsufficientIlluminationError",
    "LinOp",
    "NotPositiveError",
    "NumericalError",
    "Space",
]
