"""Finite-difference operators, boundary closure and plate coefficients."""

from .boundary import (BoundaryData, BoundaryKind, BoundarySpec, GhostClosure,
                       SideCondition, fill_ghosts, harmonic_clamp)
from .field import Field
from .operators import Assembled, PlateOperator, apply_B, apply_K, assemble
from .params import (AnalyticForcing, Forcing, LocalizedSinusoid, PlateParams,
                     ZeroForcing, flexural_rigidity)
from .stencils import biharmonic, laplacian, laplacian_matrix
