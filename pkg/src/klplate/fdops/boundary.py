"""Boundary specification and ghost-point closure.

All discrete boundary conditions are linear equations in the grid values.  The
points of a mesh split into

* active points ``P`` -- where the plate equation is applied (interior points,
  plus boundary points of free edges), and
* constrained points ``C`` -- boundary values of clamped/supported edges,
  both ghost layers of every edge, free-free corner ghosts and pinned points.

Each constrained point has exactly one equation.  Collecting them gives
``E_CC w_C + E_CP w_P = g(t)``, which ``GhostClosure`` factorizes once and
solves whenever ghosts have to be refilled.

Edge conditions, with ``NN`` the second difference along the normal index
direction, ``TT = lap_h - NN`` the tangential part and ``D0n`` the centered
outward normal difference:

=========  ==========================  ==========================================
kind       first equation (data g0)    second equation (data g1)
=========  ==========================  ==========================================
clamped    w = g0                      D0n w = g1 (ghost 1), wide D0n w = g1 (ghost 2)
supported  w = g0                      NN w + nu TT w = g1 (ghost 1; wide form for ghost 2)
free       NN w + nu TT w = g0         D0n (NN w + c TT w) = g1
=========  ==========================  ==========================================

On the annulus ``TT = lap_h - NN`` includes the ``w_r / r`` term, which is the
curved-boundary form of the tangential second derivative.  For free edges the
shear coefficient ``c`` is ``2 - nu`` (see ``FREE_SHEAR_SIGN``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import ConfigurationError
from ..mesh import Mesh
from .stencils import laplacian_matrix, normal_second_difference

# Sign convention of the free-edge shear condition d/dn [w_nn + c w_tt] = 0 with
# c = FREE_SHEAR_SIGN * (2 - nu).  +1 is the Kirchhoff effective-shear form.
FREE_SHEAR_SIGN = +1


class BoundaryKind(str, enum.Enum):
    CLAMPED = "clamped"
    SUPPORTED = "supported"
    FREE = "free"


class BoundaryData:
    """Right-hand sides ``(g0, g1)`` of the two edge equations.

    Parameters
    ----------
    g0, g1 : callable, optional
        ``g(x, y, t)`` evaluated on arrays of boundary coordinates.  Missing
        functions mean zero data.
    derivatives : callable, optional
        ``derivatives(x, y, t, order)`` returning the exact ``order``-th time
        derivative of ``(g0, g1)``.  When absent, time derivatives are taken
        by second-order central differences of ``g0``/``g1``.
    """

    def __init__(self, g0=None, g1=None, derivatives=None, fd_step=1e-4):
        self.g0 = g0
        self.g1 = g1
        self.derivatives = derivatives
        self.fd_step = fd_step

    def _eval(self, x, y, t):
        z = np.zeros(np.shape(x))
        a = z if self.g0 is None else np.broadcast_to(self.g0(x, y, t), z.shape)
        b = z if self.g1 is None else np.broadcast_to(self.g1(x, y, t), z.shape)
        return np.asarray(a, dtype=float), np.asarray(b, dtype=float)

    def __call__(self, x, y, t, order=0):
        if self.derivatives is not None:
            g0, g1 = self.derivatives(x, y, t, order)
            shape = np.shape(x)
            return (np.broadcast_to(np.asarray(g0, float), shape),
                    np.broadcast_to(np.asarray(g1, float), shape))
        if order == 0:
            return self._eval(x, y, t)
        d = self.fd_step
        fp = self._eval(x, y, t + d)
        fm = self._eval(x, y, t - d)
        if order == 1:
            return tuple((p - m) / (2 * d) for p, m in zip(fp, fm))
        if order == 2:
            f0 = self._eval(x, y, t)
            return tuple((p - 2 * c + m) / d**2 for p, c, m in zip(fp, f0, fm))
        raise ValueError(f"unsupported time-derivative order {order}")


def harmonic_clamp(amplitude, xi):
    """Clamped-edge data ``w = amplitude cos(xi t)``, ``w_n = 0`` with exact time derivatives."""

    def derivatives(x, y, t, order):
        if order not in (0, 1, 2):
            raise ValueError(f"unsupported time-derivative order {order}")
        phase = xi * t + order * np.pi / 2
        return amplitude * xi**order * np.cos(phase) * np.ones(np.shape(x)), 0.0

    return BoundaryData(derivatives=derivatives)


@dataclass(frozen=True)
class SideCondition:
    kind: BoundaryKind
    data: BoundaryData | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", BoundaryKind(self.kind))


@dataclass(frozen=True)
class BoundarySpec:
    """Boundary condition for every side of a mesh.

    ``corner`` optionally supplies the right-hand side of the free-free corner
    condition ``w_xy = g`` as ``corner(x, y, t, order)``.  ``pins`` lists
    physical points whose nearest grid point is held at ``w = 0``.
    """

    sides: Mapping[str, SideCondition]
    corner: Callable | None = None
    pins: tuple = field(default_factory=tuple)

    @classmethod
    def uniform(cls, mesh: Mesh, kind, data: BoundaryData | None = None, **kw):
        return cls({s.name: SideCondition(kind, data) for s in mesh.sides}, **kw)

    def kind_of(self, name):
        return self.sides[name].kind

    @property
    def homogeneous(self):
        return self.corner is None and all(c.data is None for c in self.sides.values())


class GhostClosure:
    """Factorized boundary system for one ``(mesh, spec, nu)`` triple."""

    def __init__(self, mesh: Mesh, spec: BoundarySpec, nu: float, lap=None):
        self.mesh = mesh
        self.spec = spec
        self.nu = float(nu)
        names = {s.name for s in mesh.sides}
        if set(spec.sides) != names:
            raise ConfigurationError(
                f"boundary spec must name exactly the sides {sorted(names)}, got {sorted(spec.sides)}")
        self.lap = laplacian_matrix(mesh) if lap is None else lap
        self._nn = [normal_second_difference(mesh, 0), normal_second_difference(mesh, 1)]
        self._build()

    # -- construction --------------------------------------------------------

    def _build(self):
        m = self.mesh
        blocks, unknowns, data = [], [], []
        ident = sp.identity(m.size, format="csr")
        nu = self.nu
        c_shear = FREE_SHEAR_SIGN * (2.0 - nu)

        for side in m.sides:
            kind = self.spec.kind_of(side.name)
            NN = self._nn[side.axis]
            TT = self.lap - NN
            h = side.spacing
            f = lambda k, owned=False: m.flat(*side.shifted(k, owned))
            b_all = f(0)
            g1, g2 = f(1), f(2)
            i1, i2 = f(-1), f(-2)
            if kind in (BoundaryKind.CLAMPED, BoundaryKind.SUPPORTED):
                b_own = f(0, True)
                blocks.append(ident[b_own])
                unknowns.append(b_own)
                data.append((side, "g0", side.owned))
                if kind is BoundaryKind.CLAMPED:
                    blocks.append((ident[g1] - ident[i1]) / (2 * h))
                    blocks.append((ident[g2] - ident[i2]) / (4 * h))
                else:
                    tan = nu * TT[b_all]
                    blocks.append(NN[b_all] + tan)
                    blocks.append((ident[g2] - 2 * ident[b_all] + ident[i2]) / (4 * h * h) + tan)
                unknowns += [g1, g2]
                data += [(side, "g1", None), (side, "g1", None)]
            else:
                Q = NN + c_shear * TT
                blocks.append(NN[b_all] + nu * TT[b_all])
                blocks.append((Q[g1] - Q[i1]) / (2 * h))
                unknowns += [g1, g2]
                data += [(side, "g0", None), (side, "g1", None)]

        if not m.is_annulus:
            self._corner_rows(blocks, unknowns, data)

        for k, (px, py) in enumerate(self.spec.pins):
            if not m.contains(px, py):
                raise ConfigurationError(f"pin ({px}, {py}) lies outside the domain")
            a, b = m.nearest_point(px, py)
            p = np.atleast_1d(m.flat(a, b))
            blocks.append(ident[p])
            unknowns.append(p)
            data.append(("pin", k, None))

        E = sp.vstack(blocks, format="csr")
        C = np.concatenate(unknowns)
        if np.unique(C).size != C.size:
            raise ConfigurationError("boundary closure assigns a point twice (pin on a boundary?)")

        canon = np.zeros(m.shape, dtype=bool)
        canon[m.interior] = True
        inside = np.flatnonzero(canon.ravel())
        P = np.setdiff1d(inside, C)

        used = np.unique(E.indices)
        stray = np.setdiff1d(used, np.concatenate([P, C]))
        if stray.size:
            raise ConfigurationError(f"boundary equations reference {stray.size} unassigned points")

        self.E = E
        self.constrained = C
        self.active = P
        self._row_data = data
        self._row_sizes = [blk.shape[0] for blk in blocks]
        self.E_CC = E[:, C].tocsc()
        self.E_CP = E[:, P].tocsr()
        try:
            self._lu = spla.splu(self.E_CC)
        except RuntimeError as exc:  # singular factor
            raise ConfigurationError(f"boundary system is singular: {exc}") from exc
        self._cosmetic = self._unused_ghosts()

    def _corner_rows(self, blocks, unknowns, data):
        m = self.mesh
        ident = sp.identity(m.size, format="csr")
        sides = {s.name: s for s in m.sides}
        for sx, sy in (("left", "bottom"), ("left", "top"), ("right", "bottom"), ("right", "top")):
            kx, ky = self.spec.kind_of(sx), self.spec.kind_of(sy)
            free_x, free_y = kx is BoundaryKind.FREE, ky is BoundaryKind.FREE
            if free_x != free_y:
                raise ConfigurationError(
                    f"corner {sx}/{sy}: free edges meeting clamped/supported edges are not supported")
            if not (free_x and free_y):
                continue
            a, ox = sides[sx].index, sides[sx].outward
            b, oy = sides[sy].index, sides[sy].outward
            # centered cross difference for w_xy at the corner
            row = (ident[m.flat(a + 1, b + 1)] - ident[m.flat(a + 1, b - 1)]
                   - ident[m.flat(a - 1, b + 1)] + ident[m.flat(a - 1, b - 1)]) / (4 * m.h1 * m.h2)
            blocks.append(row)
            unknowns.append(np.atleast_1d(m.flat(a + ox, b + oy)))
            data.append(("corner", (a, b), None))

    def _unused_ghosts(self):
        """Ghost points outside every equation, filled by extrapolation for output."""
        m = self.mesh
        if m.is_annulus:
            return []
        known = np.zeros(m.size, dtype=bool)
        known[self.constrained] = True
        known[self.active] = True
        g = m.ghost
        out = []
        for a_edge, ao in ((g, -1), (g + m.n1 - 1, +1)):
            for b_edge, bo in ((g, -1), (g + m.n2 - 1, +1)):
                for l in (1, 2):
                    b = b_edge + l * bo
                    for k in (1, 2):
                        a = a_edge + k * ao
                        if not known[m.flat(a, b)]:
                            out.append((a, b, ao))
        return out

    # -- evaluation ----------------------------------------------------------

    @property
    def homogeneous(self):
        return self.spec.homogeneous

    def data(self, t, order=0):
        """Right-hand side vector of the boundary equations at time ``t``."""
        m = self.mesh
        g = np.zeros(self.E.shape[0])
        pos = 0
        cache = {}
        for (tag, what, mask), size in zip(self._row_data, self._row_sizes):
            if tag == "pin":
                pass
            elif tag == "corner":
                if self.spec.corner is not None:
                    a, b = what
                    g[pos] = float(np.asarray(self.spec.corner(m.x[a, b], m.y[a, b], t, order)))
            else:
                side = tag
                cond = self.spec.sides[side.name]
                if cond.data is not None:
                    if side.name not in cache:
                        xs, ys = self._side_xy(side)
                        cache[side.name] = cond.data(xs, ys, t, order)
                    vals = cache[side.name][0 if what == "g0" else 1]
                    g[pos:pos + size] = vals if mask is None else vals[mask]
            pos += size
        return g

    def _side_xy(self, side):
        # reused arrays let analytic data memoize on point identity
        store = self.__dict__.setdefault("_xy_store", {})
        if side.name not in store:
            pa, pb = side.points()
            store[side.name] = (self.mesh.x[pa, pb], self.mesh.y[pa, pb])
        return store[side.name]

    def solve_constrained(self, w_active, g=None):
        rhs = -(self.E_CP @ w_active)
        if g is not None:
            rhs += g
        return self._lu.solve(rhs)

    @property
    def _eliminator(self):
        """Sparse ``w_C = S w_P`` when it is cheaper than a triangular solve."""
        if not hasattr(self, "_S"):
            S = self.elimination_matrix()
            lu_nnz = self._lu.L.nnz + self._lu.U.nnz + self.E_CP.nnz
            self._S = S if S.nnz <= lu_nnz else None
        return self._S

    def fill(self, w, t=0.0, order=0, g=None, cosmetic=True):
        """Fill boundary and ghost values of the full array ``w`` in place.

        ``g`` overrides the boundary data vector (otherwise evaluated at
        ``t`` for the given time-derivative ``order``).  ``cosmetic`` also
        fills corner ghosts that no stencil reads.
        """
        flat = w.reshape(-1)
        if g is None and not self.homogeneous:
            g = self.data(t, order)
        if g is None and self._eliminator is not None:
            flat[self.constrained] = self._eliminator @ flat[self.active]
        else:
            flat[self.constrained] = self.solve_constrained(flat[self.active], g)
        if cosmetic:
            self.fill_unused(w)
        self.mesh.sync_periodic(w)
        return w

    def fill_unused(self, w):
        for a, b, ao in self._cosmetic:
            w[a, b] = 3 * w[a - ao, b] - 3 * w[a - 2 * ao, b] + w[a - 3 * ao, b]
        return w

    def elimination_matrix(self, drop_tol=1e-14):
        """Sparse ``S`` with ``w_C = S w_P`` for homogeneous data."""
        cols = np.unique(self.E_CP.indices)
        dense = -self._lu.solve(self.E_CP[:, cols].toarray())
        scale = np.abs(dense).max() if dense.size else 0.0
        dense[np.abs(dense) <= drop_tol * scale] = 0.0
        S = sp.csr_matrix(dense)
        expand = sp.csr_matrix((np.ones(cols.size), (np.arange(cols.size), cols)),
                               shape=(cols.size, self.active.size))
        return (S @ expand).tocsr()


def fill_ghosts(m: Mesh, f, b: BoundarySpec, t=0.0, nu=0.3, order=0, closure=None):
    """Return a copy of ``f`` with boundary and ghost values filled at time ``t``."""
    w = np.array(getattr(f, "values", f), dtype=float)
    if closure is None:
        closure = GhostClosure(m, b, nu)
    return closure.fill(w, t, order)
