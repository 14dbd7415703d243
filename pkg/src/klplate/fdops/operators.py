"""Internal-force and damping operators and their assembled forms.

``K_h = K0 - T lap_h + D lap_h^2`` and ``B_h = K1 - T1 lap_h``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ..mesh import Mesh
from .boundary import BoundarySpec, GhostClosure
from .params import PlateParams
from .stencils import biharmonic, laplacian, laplacian_matrix


def apply_K(p: PlateParams, m: Mesh, w) -> np.ndarray:
    """Matrix-free ``K_h w``; NaN outside interior and boundary points."""
    w = np.asarray(getattr(w, "values", w), dtype=float)
    out = p.K0 * w
    if p.T:
        out = out - p.T * laplacian(m, w)
    if p.D:
        out = out + p.D * biharmonic(m, w)
    return _mask_interior(m, out)


def apply_B(p: PlateParams, m: Mesh, v) -> np.ndarray:
    """Matrix-free ``B_h v``; NaN outside interior and boundary points."""
    v = np.asarray(getattr(v, "values", v), dtype=float)
    out = p.K1 * v
    if p.T1:
        out = out - p.T1 * laplacian(m, v)
    return _mask_interior(m, out)


def _mask_interior(m, arr):
    out = np.full(m.shape, np.nan)
    sl = (slice(m.ghost, m.ghost + m.n1), slice(None))
    out[sl] = arr[sl]
    if not m.periodic2:
        keep = np.zeros(m.shape, dtype=bool)
        keep[m.interior] = True
        out[~keep] = np.nan
    return out


@dataclass
class Assembled:
    """Sparse system over ``unknowns`` (flat indices: active then constrained).

    The first ``n_active`` rows hold ``c0 I + cK K_h + cB B_h``; the remaining
    rows are the boundary equations, each multiplied by ``row_scale`` so that
    all rows have comparable magnitude (boundary data must be scaled alike).
    """

    matrix: sp.csr_matrix
    unknowns: np.ndarray
    n_active: int
    row_scale: np.ndarray

    def rhs(self, interior, g=None):
        """Right-hand side from active-row values and boundary data ``g``."""
        b = np.zeros(self.matrix.shape[0])
        b[:self.n_active] = interior
        if g is not None:
            b[self.n_active:] = self.row_scale * g
        return b


class PlateOperator:
    """Sparse ``K_h``/``B_h`` together with the boundary closure of a problem."""

    def __init__(self, params: PlateParams, mesh: Mesh, bspec: BoundarySpec):
        self.params = params
        self.mesh = mesh
        self.bspec = bspec
        self.lap = laplacian_matrix(mesh)
        self.closure = GhostClosure(mesh, bspec, params.nu, lap=self.lap)

    @property
    def active(self):
        return self.closure.active

    @property
    def constrained(self):
        return self.closure.constrained

    @cached_property
    def K(self) -> sp.csr_matrix:
        p, n = self.params, self.mesh.size
        K = p.K0 * sp.identity(n, format="csr")
        if p.T:
            K = K - p.T * self.lap
        if p.D:
            K = K + p.D * (self.lap @ self.lap)
        return K.tocsr()

    @cached_property
    def B(self) -> sp.csr_matrix:
        p, n = self.params, self.mesh.size
        B = p.K1 * sp.identity(n, format="csr")
        if p.T1:
            B = B - p.T1 * self.lap
        return B.tocsr()

    @cached_property
    def K_rows(self):
        """``K_h`` restricted to active rows (columns over the full mesh)."""
        return self.K[self.active].tocsr()

    @cached_property
    def B_rows(self):
        B = self.B[self.active].tocsr()
        B.eliminate_zeros()
        return B

    @property
    def damped(self):
        return not self.params.undamped

    def assemble(self, c0, cK, cB, balance=True) -> Assembled:
        """``c0 I + cK K_h + cB B_h`` on active rows, boundary equations below.

        With ``balance`` the boundary rows are rescaled to the largest entry
        of the operator rows, which keeps pivoting from favouring one block.
        """
        P, C = self.active, self.constrained
        cols = np.concatenate([P, C])
        n = self.mesh.size
        top = c0 * sp.identity(n, format="csr")[P] + cK * self.K_rows
        if cB:
            top = top + cB * self.B_rows
        top = top.tocsc()[:, cols]
        bottom = self.closure.E.tocsr()[:, cols]
        scale = np.ones(bottom.shape[0])
        if balance:
            big = np.abs(top).max() if top.nnz else 1.0
            row_max = np.abs(bottom).max(axis=1).toarray().ravel()
            scale = big / np.where(row_max > 0, row_max, 1.0)
            bottom = sp.diags(scale) @ bottom
        A = sp.vstack([top, bottom], format="csr")
        return Assembled(A, cols, P.size, scale)

    def eliminated_K(self) -> sp.csr_matrix:
        """``K_h`` on active unknowns with homogeneous boundary values eliminated."""
        S = self.closure.elimination_matrix()
        KP = self.K_rows[:, self.active]
        KC = self.K_rows[:, self.constrained]
        return (KP + KC @ S).tocsr()


def assemble(p: PlateParams, m: Mesh, b: BoundarySpec, c0, cK, cB, balance=True) -> Assembled:
    return PlateOperator(p, m, b).assemble(c0, cK, cB, balance=balance)
