"""chi-nets: deep bilinear tensor-network classifiers with ODT compression and
weight-based interpretation."""

__version__ = "0.1.0"

from .model import ChiNet, DenseCore, FactoredCore, forward, init_chinet, materialise_poly, symmetrise
from .odt import decompose, diagonalise, orthogonalise, select_ranks, truncate

__all__ = [
    "ChiNet", "DenseCore", "FactoredCore", "forward", "init_chinet", "materialise_poly", "symmetrise",
    "decompose", "diagonalise", "orthogonalise", "select_ranks", "truncate",
]
