"""Closed-form reference solutions.

Exact solutions are products ``w = X(x) Y(y) T(t)`` of one-dimensional
profiles that know their own derivatives.  From the Cartesian derivatives
one gets the plate residual (used as manufactured forcing) and the
right-hand sides of every boundary equation on straight or circular edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .fdops.boundary import FREE_SHEAR_SIGN, BoundaryData, BoundaryKind, BoundarySpec, SideCondition
from .fdops.params import AnalyticForcing, PlateParams
from .mesh import Mesh

# -- one-dimensional profiles -------------------------------------------------


class Sin4Profile:
    """``sin(pi (s + shift))^4`` written as ``3/8 - cos(2u)/2 + cos(4u)/8``."""

    def __init__(self, shift=1.0):
        self.shift = shift

    def __call__(self, s, k=0):
        u = np.pi * (np.asarray(s, dtype=float) + self.shift)
        q = k * np.pi / 2
        out = -0.5 * (2 * np.pi) ** k * np.cos(2 * u + q) + 0.125 * (4 * np.pi) ** k * np.cos(4 * u + q)
        return out + 0.375 if k == 0 else out


class SineProfile:
    """``sin(kappa (s - origin))``."""

    def __init__(self, kappa, origin=0.0):
        self.kappa = kappa
        self.origin = origin

    def __call__(self, s, k=0):
        u = self.kappa * (np.asarray(s, dtype=float) - self.origin)
        return self.kappa**k * np.sin(u + k * np.pi / 2)


class CosineProfile:
    """``cos(omega t)``."""

    def __init__(self, omega):
        self.omega = omega

    def __call__(self, t, k=0):
        return self.omega**k * np.cos(self.omega * np.asarray(t, dtype=float) + k * np.pi / 2)


# -- separable exact solutions ---------------------------------------------


class SeparableSolution:
    """``w(x, y, t) = X(x) Y(y) T(t)`` with analytic derivatives."""

    def __init__(self, X, Y, T):
        self.X, self.Y, self.T = X, Y, T
        self._cache = {}
        self._recent = []

    def spatial(self, x, y):
        """Memoized ``(i, j) -> d^(i+j)(X Y) / dx^i dy^j`` on fixed points ``(x, y)``.

        Time stepping evaluates the same boundary and grid points every step,
        so the spatial factors are computed once per point set.
        """
        for rx, ry, table in self._recent:
            if rx is x and ry is y:
                return table
        xa = np.asarray(x, dtype=float)
        ya = np.asarray(y, dtype=float)
        key = (xa.shape, ya.shape, xa.tobytes(), ya.tobytes())
        table = self._cache.get(key)
        if table is None:
            if len(self._cache) >= 32:
                self._cache.clear()
            table = _SpatialTable(self.X, self.Y, xa, ya)
            self._cache[key] = table
        self._recent = [(x, y, table)] + self._recent[:7]
        return table

    def d(self, i, j, x, y, t, k=0):
        """``d^(i+j+k) w / dx^i dy^j dt^k``."""
        return self.spatial(x, y)[i, j] * self.T(t, k)

    def __call__(self, x, y, t):
        return self.d(0, 0, x, y, t)

    def laplacian(self, x, y, t, k=0):
        return self.spatial(x, y).combo("lap") * self.T(t, k)

    def biharmonic(self, x, y, t, k=0):
        return self.spatial(x, y).combo("bih") * self.T(t, k)

    def residual(self, p: PlateParams, x, y, t):
        """Forcing that makes ``w`` an exact solution of the plate equation."""
        S = self.spatial(x, y)
        T = lambda k: self.T(t, k)
        out = (p.rho_h * T(2) + p.K0 * T(0) + p.K1 * T(1)) * S[0, 0]
        if p.T or p.T1:
            out = out - (p.T * T(0) + p.T1 * T(1)) * S.combo("lap")
        if p.D:
            out = out + p.D * T(0) * S.combo("bih")
        return out

    def forcing(self, p: PlateParams):
        return AnalyticForcing(lambda x, y, t: self.residual(p, x, y, t))

    # -- boundary traces ---------------------------------------------------

    def _normal_traces(self, x, y, normal, t, k):
        """``w``, ``w_n``, ``w_nn``, ``w_tt = lap w - w_nn``, ``d_n w_nn``, ``d_n lap w``."""
        S = self.spatial(x, y)
        tk = self.T(t, k)
        return tuple(tk * v for v in S.traces(normal))

    def boundary_data(self, kind, normal, nu):
        """``BoundaryData`` whose ``(g0, g1)`` reproduce this solution on an edge.

        ``normal(x, y)`` returns the outward unit normal components.
        """
        kind = BoundaryKind(kind)
        c = FREE_SHEAR_SIGN * (2.0 - nu)

        def derivatives(x, y, t, order):
            w, wn, wnn, wtt, wnnn, dlap = self._normal_traces(x, y, normal, t, order)
            if kind is BoundaryKind.CLAMPED:
                return w, wn
            if kind is BoundaryKind.SUPPORTED:
                return w, wnn + nu * wtt
            # d_n (w_nn + c w_tt) = (1 - c) d_n w_nn + c d_n lap w along a ray
            return wnn + nu * wtt, (1 - c) * wnnn + c * dlap

        return BoundaryData(derivatives=derivatives)

    def corner_data(self):
        return lambda x, y, t, order: self.d(1, 1, x, y, t, order)

    def boundary_spec(self, m: Mesh, kinds, nu, pins=()):
        """Boundary specification of mesh ``m`` carrying this solution's data.

        ``kinds`` is one kind for every side or a mapping side name -> kind.
        """
        if isinstance(kinds, (str, BoundaryKind)):
            kinds = {s.name: kinds for s in m.sides}
        sides = {}
        for s in m.sides:
            sides[s.name] = SideCondition(kinds[s.name], self.boundary_data(kinds[s.name], _normal_fn(m, s), nu))
        free = {n for n, k in kinds.items() if BoundaryKind(k) is BoundaryKind.FREE}
        corner = self.corner_data() if (not m.is_annulus and free) else None
        return BoundarySpec(sides, corner=corner, pins=tuple(pins))


class _SpatialTable:
    def __init__(self, X, Y, x, y):
        self.X, self.Y, self.x, self.y = X, Y, x, y
        self._x, self._y, self._xy = {}, {}, {}
        self._combos = {}

    def __getitem__(self, ij):
        v = self._xy.get(ij)
        if v is None:
            i, j = ij
            if i not in self._x:
                self._x[i] = self.X(self.x, i)
            if j not in self._y:
                self._y[j] = self.Y(self.y, j)
            v = self._xy[ij] = self._x[i] * self._y[j]
        return v

    def combo(self, name):
        v = self._combos.get(name)
        if v is None:
            if name == "lap":
                v = self[2, 0] + self[0, 2]
            else:
                v = self[4, 0] + 2 * self[2, 2] + self[0, 4]
            self._combos[name] = v
        return v

    def traces(self, normal):
        """Spatial parts of the boundary traces for outward normal ``normal(x, y)``."""
        key = ("traces", normal)
        v = self._combos.get(key)
        if v is None:
            nx, ny = normal(self.x, self.y)
            d = self.__getitem__
            w = d((0, 0))
            wn = nx * d((1, 0)) + ny * d((0, 1))
            wnn = nx * nx * d((2, 0)) + 2 * nx * ny * d((1, 1)) + ny * ny * d((0, 2))
            wnnn = (nx**3 * d((3, 0)) + 3 * nx * nx * ny * d((2, 1))
                    + 3 * nx * ny * ny * d((1, 2)) + ny**3 * d((0, 3)))
            dlap = nx * (d((3, 0)) + d((1, 2))) + ny * (d((2, 1)) + d((0, 3)))
            v = self._combos[key] = (w, wn, wnn, self.combo("lap") - wnn, wnnn, dlap)
        return v


def _normal_fn(m: Mesh, side):
    if m.is_annulus:
        sign = float(side.outward)

        def radial(x, y):
            r = np.hypot(x, y)
            return sign * x / r, sign * y / r
        return radial
    n = side.normals[0]
    return lambda x, y: (np.full(np.shape(x), n[0]), np.full(np.shape(x), n[1]))


# -- manufactured solution ------------------------------------------------------

MMS_PARAMS = PlateParams(rho_h=1.0, K0=2.0, T=1.0, D=0.01, K1=5.0, T1=0.1, nu=0.1)


def manufactured_solution():
    """``sin^4(pi(x+1)) sin^4(pi(y+1)) cos(2 pi t)``."""
    return SeparableSolution(Sin4Profile(1.0), Sin4Profile(1.0), CosineProfile(2 * np.pi))


_MMS = manufactured_solution()


def mms_w(x, y, t):
    return _MMS(x, y, t)


def mms_forcing(p: PlateParams, x, y, t):
    return _MMS.residual(p, x, y, t)


# -- simply supported rectangle ----------------------------------------------


def supported_omega(m, n, L, H, p: PlateParams):
    """Natural angular frequency of mode ``(m, n)`` of a supported ``L x H`` plate."""
    return np.pi**2 * (m**2 / L**2 + n**2 / H**2) * np.sqrt(p.D / p.rho_h)


def standing_wave_solution(m, n, L, H, p: PlateParams, x0=0.0, y0=0.0):
    omega = supported_omega(m, n, L, H, p)
    return SeparableSolution(SineProfile(m * np.pi / L, x0), SineProfile(n * np.pi / H, y0),
                             CosineProfile(omega))


def standing_wave(m, n, x, y, t, L, H, p: PlateParams):
    """``sin(m pi x / L) sin(n pi y / H) cos(omega_mn t)``."""
    return standing_wave_solution(m, n, L, H, p)(x, y, t)


@dataclass(frozen=True)
class SeriesTruncation:
    M: int = 7
    N: int = 7

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ConfigurationError("series cutoffs must be at least 1")


def forced_coefficient(m, n, t, F0, xi, L, H, p: PlateParams):
    """Modal amplitude of a supported plate under ``F0 sin(xi t)``, starting at rest."""
    w = supported_omega(m, n, L, H, p)
    if np.isclose(xi, w, rtol=1e-12, atol=0.0):
        raise ConfigurationError(f"driving frequency {xi} resonates with mode ({m}, {n})")
    amp = 2 * F0 * (1 - np.cos(m * np.pi)) * (1 - np.cos(n * np.pi)) / (p.rho_h * m * n * np.pi**2 * w)
    t = np.asarray(t, dtype=float)
    st, sw = np.sin(xi * t), np.sin(w * t)
    return amp * ((st + sw) / (xi + w) - (st - sw) / (xi - w))


def forced_response(x, y, t, F0, xi, trunc: SeriesTruncation, L, H, p: PlateParams):
    """Truncated modal series for the uniformly loaded supported plate.

    ``x``/``y`` are scalars or arrays broadcast against ``t``.
    """
    out = 0.0
    for m in range(1, trunc.M + 1):
        for n in range(1, trunc.N + 1):
            if m % 2 == 0 or n % 2 == 0:
                continue
            out = out + (forced_coefficient(m, n, t, F0, xi, L, H, p)
                         * np.sin(m * np.pi * x / L) * np.sin(n * np.pi * y / H))
    return out


# -- errors ------------------------------------------------------------------------


@dataclass
class ErrorReport:
    max_norm: float
    l2_norm: float
    grid: str = ""
    time: float = 0.0


def error_norms(numeric, exact, t, mesh: Mesh | None = None, grid=""):
    """Max and root-mean-square errors over interior and boundary points.

    ``numeric`` is a ``Field`` or a full array (then ``mesh`` is required);
    ``exact`` is ``exact(x, y, t)``.
    """
    m = getattr(numeric, "mesh", mesh)
    if m is None:
        raise ValueError("mesh required for plain arrays")
    vals = np.asarray(getattr(numeric, "values", numeric), dtype=float).reshape(m.shape)
    sl = m.interior
    err = np.abs(vals[sl] - np.asarray(exact(m.x[sl], m.y[sl], t), dtype=float))
    return ErrorReport(float(err.max()), float(np.sqrt(np.mean(err**2))), grid, float(t))
