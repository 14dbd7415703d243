"""Structured meshes with two ghost layers.

Grid functions live on arrays of shape ``(n1 + 4, n2 + 4)``.  Array index
``a`` along an axis corresponds to the logical grid index ``a - 2``, so the
physical points occupy ``2 .. n + 1`` and two ghost layers sit on either side.

Two mesh kinds are supported:

* ``Rectangle`` -- a Cartesian tensor grid on ``[x0, x1] x [y0, y1]``.
* ``Annulus`` -- a polar tensor grid ``(r, theta)`` on ``r_in <= r <= r_out``.
  Axis 1 is periodic: the ``n2`` angular points are ``theta_j = j * h2`` and the
  ghost columns are aliases of the opposite side of the circle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigurationError

GHOST = 2


@dataclass(frozen=True)
class Rectangle:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ConfigurationError(f"degenerate rectangle {self}")


@dataclass(frozen=True)
class Annulus:
    r_in: float
    r_out: float

    def __post_init__(self):
        if not (0 < self.r_in < self.r_out):
            raise ConfigurationError(f"annulus needs 0 < r_in < r_out, got {self}")


@dataclass(frozen=True, eq=False)
class BoundarySide:
    """One boundary component and the index geometry needed to close it.

    The side is the grid line ``index`` of array axis ``axis``.  Ghost points
    lie in the direction ``outward`` (+1 or -1 in array index).  ``span`` lists
    the array indices along the tangential axis, corners included; ``owned``
    marks the entries this side enumerates (each corner is owned by exactly
    one side).
    """

    name: str
    ident: int
    axis: int
    index: int
    outward: int
    span: np.ndarray
    owned: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray
    spacing: float

    def points(self, owned_only=False):
        """Array multi-indices ``(a, b)`` of the boundary points."""
        span = self.span[self.owned] if owned_only else self.span
        line = np.full_like(span, self.index)
        return (line, span) if self.axis == 0 else (span, line)

    def shifted(self, k, owned_only=False):
        """Multi-indices of the points ``k`` layers outward (``k < 0``: inward)."""
        span = self.span[self.owned] if owned_only else self.span
        line = np.full_like(span, self.index + k * self.outward)
        return (line, span) if self.axis == 0 else (span, line)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Structured mesh.  Immutable; coordinate arrays are read-only."""

    kind: Rectangle | Annulus
    n1: int
    n2: int
    h1: float
    h2: float
    ghost: int = GHOST
    periodic2: bool = False
    x: np.ndarray = field(repr=False, default=None)
    y: np.ndarray = field(repr=False, default=None)

    @property
    def shape(self):
        return (self.n1 + 2 * self.ghost, self.n2 + 2 * self.ghost)

    @property
    def size(self):
        return self.shape[0] * self.shape[1]

    @property
    def is_annulus(self):
        return isinstance(self.kind, Annulus)

    @cached_property
    def r(self):
        """Radius of every array row (annulus only)."""
        if not self.is_annulus:
            raise AttributeError("r is only defined on an annulus")
        a = np.arange(self.shape[0]) - self.ghost
        return self.kind.r_in + a * self.h1

    @cached_property
    def theta(self):
        """Angle of every array column (annulus only; aliases wrapped)."""
        if not self.is_annulus:
            raise AttributeError("theta is only defined on an annulus")
        b = np.mod(np.arange(self.shape[1]) - self.ghost, self.n2)
        return b * self.h2

    @cached_property
    def sides(self) -> tuple[BoundarySide, ...]:
        return _rectangle_sides(self) if not self.is_annulus else _annulus_sides(self)

    def side(self, name):
        for s in self.sides:
            if s.name == name:
                return s
        raise KeyError(name)

    # -- index helpers -------------------------------------------------------

    @property
    def interior(self):
        """Slices selecting interior + boundary points (for the annulus the
        canonical angular columns)."""
        g = self.ghost
        return (slice(g, g + self.n1), slice(g, g + self.n2))

    def flat(self, a, b):
        """Flat index of array multi-index ``(a, b)``, aliasing periodic columns."""
        b = np.asarray(b)
        if self.periodic2:
            b = self.ghost + np.mod(b - self.ghost, self.n2)
        return np.asarray(a) * self.shape[1] + b

    def sync_periodic(self, values):
        """Copy canonical angular columns into the periodic ghost columns (in place)."""
        if self.periodic2:
            g, n = self.ghost, self.n2
            values[..., :g] = values[..., n:n + g]
            values[..., n + g:] = values[..., g:2 * g]
        return values

    def new_field(self, fill=np.nan):
        return np.full(self.shape, fill, dtype=float)

    def sample(self, fn, *args):
        """Evaluate ``fn(x, y, *args)`` on every array point."""
        return np.asarray(fn(self.x, self.y, *args), dtype=float) * np.ones(self.shape)

    def logical_coords(self, px, py):
        """Fractional array indices ``(a, b)`` of a physical point."""
        if self.is_annulus:
            rr = np.hypot(px, py)
            th = np.mod(np.arctan2(py, px), 2 * np.pi)
            return (rr - self.kind.r_in) / self.h1 + self.ghost, th / self.h2 + self.ghost
        return ((px - self.kind.x0) / self.h1 + self.ghost,
                (py - self.kind.y0) / self.h2 + self.ghost)

    def contains(self, px, py, tol=1e-12):
        if self.is_annulus:
            rr = np.hypot(px, py)
            return self.kind.r_in - tol <= rr <= self.kind.r_out + tol
        k = self.kind
        return (k.x0 - tol <= px <= k.x1 + tol) and (k.y0 - tol <= py <= k.y1 + tol)

    def nearest_point(self, px, py):
        """Array multi-index of the grid point nearest to ``(px, py)``."""
        a, b = self.logical_coords(px, py)
        a = int(np.clip(np.rint(a), self.ghost, self.ghost + self.n1 - 1))
        b = int(np.rint(b))
        if self.periodic2:
            b = self.ghost + (b - self.ghost) % self.n2
        else:
            b = int(np.clip(b, self.ghost, self.ghost + self.n2 - 1))
        return a, b


def _readonly(arr):
    arr = np.ascontiguousarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def build_rectangle(x0, x1, y0, y1, n1, n2):
    """Cartesian mesh on ``[x0, x1] x [y0, y1]`` with ``n1 x n2`` grid points."""
    kind = Rectangle(float(x0), float(x1), float(y0), float(y1))
    if n1 < 5 or n2 < 5:
        raise ConfigurationError(f"need at least 5 points per axis, got {n1}x{n2}")
    h1 = (kind.x1 - kind.x0) / (n1 - 1)
    h2 = (kind.y1 - kind.y0) / (n2 - 1)
    xa = kind.x0 + (np.arange(n1 + 2 * GHOST) - GHOST) * h1
    ya = kind.y0 + (np.arange(n2 + 2 * GHOST) - GHOST) * h2
    # pin the far edge exactly on the boundary
    xa[GHOST + n1 - 1] = kind.x1
    ya[GHOST + n2 - 1] = kind.y1
    X, Y = np.meshgrid(xa, ya, indexing="ij")
    return Mesh(kind, int(n1), int(n2), h1, h2, GHOST, False, _readonly(X), _readonly(Y))


def build_annulus(r_in, r_out, n1, n2):
    """Polar mesh on ``r_in <= |x| <= r_out``; ``n1`` radial and ``n2`` angular points."""
    kind = Annulus(float(r_in), float(r_out))
    if n1 < 5:
        raise ConfigurationError(f"need at least 5 radial points, got {n1}")
    if n2 < 8:
        raise ConfigurationError(f"need at least 8 angular points, got {n2}")
    h1 = (kind.r_out - kind.r_in) / (n1 - 1)
    h2 = 2 * np.pi / n2
    if kind.r_in - GHOST * h1 <= 0:
        raise ConfigurationError("radial spacing too coarse: ghost radii reach the origin")
    ra = kind.r_in + (np.arange(n1 + 2 * GHOST) - GHOST) * h1
    ra[GHOST + n1 - 1] = kind.r_out
    # periodic aliases must be bit-identical to their canonical columns
    canon = np.arange(n2) * h2
    ta = canon[np.mod(np.arange(n2 + 2 * GHOST) - GHOST, n2)]
    R, TH = np.meshgrid(ra, ta, indexing="ij")
    X, Y = R * np.cos(TH), R * np.sin(TH)
    return Mesh(kind, int(n1), int(n2), h1, h2, GHOST, True, _readonly(X), _readonly(Y))


def min_physical_spacing(m: Mesh) -> float:
    if m.is_annulus:
        return min(m.h1, m.kind.r_in * m.h2)
    return min(m.h1, m.h2)


def _rectangle_sides(m):
    g = m.ghost
    lo1, hi1 = g, g + m.n1 - 1
    lo2, hi2 = g, g + m.n2 - 1
    span1 = np.arange(lo1, hi1 + 1)
    span2 = np.arange(lo2, hi2 + 1)

    def make(name, ident, axis, index, outward, span, own_corners, spacing):
        owned = np.ones(span.size, dtype=bool)
        if not own_corners:
            owned[[0, -1]] = False
        nrm = np.zeros((span.size, 2))
        nrm[:, axis] = outward
        tan = np.zeros((span.size, 2))
        tan[:, 1 - axis] = 1.0
        for arr in (span, owned, nrm, tan):
            arr.setflags(write=False)
        return BoundarySide(name, ident, axis, index, outward, span, owned, nrm, tan, spacing)

    # corners belong to the side with the smaller identifier (left/right)
    return (
        make("left", 0, 0, lo1, -1, span2, True, m.h1),
        make("right", 1, 0, hi1, +1, span2, True, m.h1),
        make("bottom", 2, 1, lo2, -1, span1, False, m.h2),
        make("top", 3, 1, hi2, +1, span1, False, m.h2),
    )


def _annulus_sides(m):
    g = m.ghost
    span = np.arange(g, g + m.n2)
    th = m.theta[span]
    radial = np.stack([np.cos(th), np.sin(th)], axis=1)
    tangential = np.stack([-np.sin(th), np.cos(th)], axis=1)
    sides = []
    for name, ident, index, outward in (("inner", 0, g, -1), ("outer", 1, g + m.n1 - 1, +1)):
        owned = np.ones(span.size, dtype=bool)
        nrm = outward * radial
        tan = tangential.copy()
        for arr in (owned, nrm, tan):
            arr.setflags(write=False)
        sides.append(BoundarySide(name, ident, 0, index, outward, span, owned, nrm, tan, m.h1))
    span.setflags(write=False)
    return tuple(sides)
