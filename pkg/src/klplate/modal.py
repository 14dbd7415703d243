"""Vibration modes of the discrete plate operator and their nodal lines.

The eigenproblem ``K_h phi = lambda phi`` is posed on the active unknowns with
the homogeneous boundary equations eliminated.  Modes are found by inverse
subspace iteration: each sweep solves the bordered system (active rows of
``K_h - sigma I`` stacked on the boundary equations) for a block of vectors,
re-orthonormalizes, and extracts Ritz pairs from the projected operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, SolverError
from .fdops.boundary import BoundaryKind, BoundarySpec
from .fdops.field import Field
from .fdops.operators import PlateOperator
from .fdops.params import PlateParams
from .mesh import Mesh


@dataclass
class Mode:
    """One eigenpair; ``phi`` has unit discrete 2-norm over active points."""

    lam: float
    f: float
    phi: Field
    residual: float
    fixed_sides: tuple = field(default=(), repr=False)

    @property
    def omega(self):
        return 2 * np.pi * self.f


def natural_frequency(lam, rho_h):
    """Frequency in Hz of an undamped mode with eigenvalue ``lam``."""
    if rho_h <= 0:
        raise ConfigurationError("rho_h must be positive")
    if lam < 0:
        raise SolverError(f"negative eigenvalue {lam}: operator is indefinite")
    return np.sqrt(lam / rho_h) / (2 * np.pi)


class ModalSolver:
    """Inverse subspace iteration for the lowest modes of one plate problem.

    Parameters
    ----------
    op : PlateOperator
        Operator bundle; its boundary specification must be homogeneous.
    shift : float, optional
        Spectral shift ``sigma``.  By default ``0`` unless the problem admits
        rigid motions (no stiffness term and no fixed edge), in which case a
        small negative shift is used.
    """

    def __init__(self, op: PlateOperator, shift=None):
        if not op.bspec.homogeneous:
            raise ConfigurationError("modal analysis needs homogeneous boundary conditions")
        self.op = op
        self.shift = self._default_shift() if shift is None else float(shift)
        A = op.assemble(-self.shift, 1.0, 0.0)
        try:
            self._lu = spla.splu(A.matrix.tocsc())
        except RuntimeError as exc:
            raise SolverError(f"shifted operator is singular: {exc}") from exc
        self._n = A.n_active
        self._rhs_size = A.matrix.shape[0]
        P, C = op.active, op.constrained
        self._KP = op.K_rows[:, P].tocsr()
        self._KC = op.K_rows[:, C].tocsr()
        # residuals cannot drop below rounding in K_h applied to a unit vector
        self.knorm = float(np.abs(op.K_rows).sum(axis=1).max())

    def _default_shift(self):
        op = self.op
        p = op.params
        fixed = any(c.kind is not BoundaryKind.FREE for c in op.bspec.sides.values())
        if p.K0 > 0 or fixed:
            return 0.0
        # rigid motions make K_h singular; shift below zero by the scale of the
        # lowest elastic eigenvalue.  A much smaller shift lets the rigid modes
        # dominate every inverse solve and their rounding swamps the rest.
        m = op.mesh
        ext = (m.n1 - 1) * m.h1 if not m.is_annulus else m.kind.r_out - m.kind.r_in
        scale = p.D * (np.pi / ext) ** 4 + p.T * (np.pi / ext) ** 2
        return -scale if scale > 0 else -1.0

    def apply(self, X):
        """``K_h`` with boundary elimination, applied to columns of ``X``."""
        X = np.atleast_2d(X.T).T
        WC = np.column_stack([self.op.closure.solve_constrained(x) for x in X.T])
        return self._KP @ X + self._KC @ WC

    def inverse(self, X):
        rhs = np.zeros((self._rhs_size, X.shape[1]))
        rhs[:self._n] = X
        return self._lu.solve(rhs)[:self._n]

    def solve(self, k, tol=1e-9, block=None, maxiter=1000, seed=0):
        """Lowest ``k`` eigenpairs (ascending ``|lambda|``).

        A unit vector ``phi`` is accepted once
        ``|K_h phi - lambda phi|_2 <= tol * |lambda| + 100 eps |K_h|_inf``;
        the second term is the rounding floor of the operator itself.
        """
        n = self._n
        k = int(k)
        if not 1 <= k <= n:
            raise ConfigurationError(f"cannot compute {k} modes from {n} unknowns")
        p = min(n, k + 4 if block is None else max(int(block), k))
        rng = np.random.default_rng(seed)
        Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
        res = np.full(k, np.inf)
        floor = 100 * np.finfo(float).eps * self.knorm
        for sweep in range(maxiter):
            Q, _ = np.linalg.qr(self.inverse(Q))
            KQ = self.apply(Q)
            H = Q.T @ KQ
            theta, S = sla.eig(H)
            order = np.argsort(np.abs(theta - self.shift))
            theta, S = theta[order], S[:, order]
            theta, S = _realify(theta, S)
            X = Q @ S
            X /= np.linalg.norm(X, axis=0)
            R = self.apply(X[:, :k]) - X[:, :k] * theta[:k]
            res = np.linalg.norm(R, axis=0)
            if np.all(res <= tol * np.abs(theta[:k]) + floor):
                break
        else:
            raise SolverError(
                f"subspace iteration did not converge in {maxiter} sweeps; "
                f"residuals {np.array2string(res, precision=2)}")
        order = np.argsort(np.abs(theta[:k]))
        theta, X = theta[:k][order], X[:, :k][:, order]
        X = _orthonormalize_clusters(theta, X)
        res = np.linalg.norm(self.apply(X) - X * theta, axis=0)
        return theta, X, res


def _orthonormalize_clusters(theta, X, rel=1e-7):
    """Orthonormal basis inside every group of (numerically) equal eigenvalues."""
    X = X.copy()
    i = 0
    while i < theta.size:
        j = i + 1
        while j < theta.size and abs(theta[j] - theta[i]) <= rel * max(abs(theta[i]), 1e-300):
            j += 1
        if j - i > 1:
            X[:, i:j], _ = np.linalg.qr(X[:, i:j])
        i = j
    return X


def _realify(theta, S):
    """Real Ritz values and vectors.

    A conjugate pair spans a real invariant subspace; it is replaced by an
    orthonormal basis of the real and imaginary parts of its vector.  For an
    eigenvalue that is double up to rounding, taking the real part of both
    conjugates would return the same vector twice.
    """
    if not np.any(theta.imag):
        return theta.real, S.real.copy()
    out = np.empty(S.shape)
    j = 0
    while j < S.shape[1]:
        if theta[j].imag and j + 1 < S.shape[1] and theta[j + 1] == np.conj(theta[j]):
            out[:, j:j + 2], _ = np.linalg.qr(np.column_stack([S[:, j].real, S[:, j].imag]))
            j += 2
        else:
            out[:, j] = S[:, j].real
            j += 1
    return theta.real, out


def solve_modes(p: PlateParams, m: Mesh, b: BoundarySpec, k: int, tol=1e-9,
                shift=None, block=None, maxiter=1000, op=None) -> list[Mode]:
    """The ``k`` modes of smallest ``|lambda|``, ascending."""
    op = PlateOperator(p, m, b) if op is None else op
    solver = ModalSolver(op, shift=shift)
    lam, X, res = solver.solve(k, tol=tol, block=block, maxiter=maxiter)
    fixed = tuple(name for name, c in b.sides.items() if c.kind is not BoundaryKind.FREE)
    modes = []
    for j in range(lam.size):
        x = X[:, j]
        x = x / np.linalg.norm(x)
        if x[np.argmax(np.abs(x))] < 0:
            x = -x
        w = m.new_field(0.0)
        w.reshape(-1)[op.active] = x
        op.closure.fill(w)
        lam_j = float(lam[j])
        if lam_j < 0 and abs(lam_j) <= 1e-8 * max(abs(lam[-1]), 1.0):
            lam_j = 0.0
        modes.append(Mode(lam_j, natural_frequency(lam_j, p.rho_h), Field(m, w), float(res[j]), fixed))
    return modes


def degenerate_pairs(values, rel=5e-3):
    """Count adjacent pairs of sorted ``values`` closer than ``rel`` (relative).

    Returns ``(pairs, distinct)`` where a pair consumes both members.
    """
    v = np.sort(np.asarray(values, dtype=float))
    pairs, i, distinct = 0, 0, 0
    while i < v.size:
        if i + 1 < v.size and abs(v[i + 1] - v[i]) <= rel * max(abs(v[i + 1]), abs(v[i])):
            pairs += 1
            i += 2
        else:
            i += 1
        distinct += 1
    return pairs, distinct


# -- nodal lines -------------------------------------------------------------


def nodal_lines(mode: Mode, zero_tol=1e-10) -> list[np.ndarray]:
    """Zero contours of a mode shape as polylines of physical ``(x, y)`` points.

    Edges held at ``w = 0`` are excluded from the contoured region; values
    below ``zero_tol`` times the maximum are snapped to zero and counted as
    non-negative.
    """
    m = mode.phi.mesh
    g = m.ghost
    w = mode.phi.values
    lo1, hi1 = g, g + m.n1
    lo2, hi2 = g, g + m.n2
    fixed = set(mode.fixed_sides)
    if "left" in fixed or "inner" in fixed:
        lo1 += 1
    if "right" in fixed or "outer" in fixed:
        hi1 -= 1
    if not m.is_annulus:
        if "bottom" in fixed:
            lo2 += 1
        if "top" in fixed:
            hi2 -= 1
    V = w[lo1:hi1, lo2:hi2]
    X = m.x[lo1:hi1, lo2:hi2]
    Y = m.y[lo1:hi1, lo2:hi2]
    if m.is_annulus:
        V = np.concatenate([V, V[:, :1]], axis=1)
        X = np.concatenate([X, X[:, :1]], axis=1)
        Y = np.concatenate([Y, Y[:, :1]], axis=1)
    return marching_squares(V, X, Y, zero_tol=zero_tol, wrap=m.is_annulus)


def marching_squares(V, X, Y, level=0.0, zero_tol=0.0, wrap=False):
    """Polylines of the ``level`` set of ``V`` sampled at points ``(X, Y)``.

    ``wrap`` declares that the last column duplicates the first so that
    contours crossing the seam are joined.
    """
    V = np.asarray(V, dtype=float) - level
    scale = np.abs(V).max() if V.size else 0.0
    if scale == 0.0:
        return []
    V = np.where(np.abs(V) <= zero_tol * scale, 0.0, V)
    pos = V >= 0
    n1, n2 = V.shape
    ncol = n2 - 1

    def edge_key(axis, i, j):
        if wrap:
            j = j % ncol
        return (axis, i, j)

    def point(key):
        axis, i, j = key
        i2, j2 = (i + 1, j) if axis == 0 else (i, j + 1)
        a, b = V[i, j], V[i2, j2]
        s = a / (a - b)
        return (X[i, j] + s * (X[i2, j2] - X[i, j]), Y[i, j] + s * (Y[i2, j2] - Y[i, j]))

    segments = []
    for i in range(n1 - 1):
        for j in range(n2 - 1):
            ca, cb, cc, cd = pos[i, j], pos[i + 1, j], pos[i + 1, j + 1], pos[i, j + 1]
            if ca == cb == cc == cd:
                continue
            e = [edge_key(0, i, j), edge_key(1, i + 1, j), edge_key(0, i, j + 1), edge_key(1, i, j)]
            cut = [ca != cb, cb != cc, cd != cc, ca != cd]
            idx = [q for q in range(4) if cut[q]]
            if len(idx) == 2:
                segments.append((e[idx[0]], e[idx[1]]))
            else:
                centre = 0.25 * (V[i, j] + V[i + 1, j] + V[i + 1, j + 1] + V[i, j + 1])
                if (centre >= 0) == ca:
                    segments += [(e[0], e[1]), (e[2], e[3])]
                else:
                    segments += [(e[0], e[3]), (e[1], e[2])]

    adj = {}
    for s, (u, v) in enumerate(segments):
        adj.setdefault(u, []).append(s)
        adj.setdefault(v, []).append(s)
    used = np.zeros(len(segments), dtype=bool)
    lines = []
    # open chains start at edges touched once; closed loops are picked up after
    starts = [key for key, segs in adj.items() if len(segs) == 1]
    for start in starts + list(adj):
        while any(not used[s] for s in adj[start]):
            chain = [start]
            cur = start
            while True:
                nxt = [s for s in adj[cur] if not used[s]]
                if not nxt:
                    break
                s = nxt[0]
                used[s] = True
                u, v = segments[s]
                cur = v if u == cur else u
                chain.append(cur)
                if cur == start:
                    break
            lines.append(np.array([point(key) for key in chain]))
    return lines
