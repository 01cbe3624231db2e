"""Tensor hypercontraction of electron repulsion integrals by randomized column selection."""

from thcid import parallel  # noqa: F401  (sets the threading layer first)
from thcid.errors import DegenerateInputError, NumericalError, ThresholdTooSmallError
from thcid.model import (
    OrbitalSet,
    PeriodicGrid,
    Potential,
    build_grid,
    random_potential,
    solve_orbitals,
)
from thcid.interpolative import (
    InterpolativeBasis,
    PivotedQRResult,
    SketchMatrix,
    compress,
    interpolation_basis,
    pair_density_row,
    pivoted_qr,
    select_rank,
    sketch,
)

__version__ = "0.1.0"
