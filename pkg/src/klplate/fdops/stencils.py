"""Second-order centered difference stencils.

The matrix-free functions work on full ghosted arrays and return NaN wherever
the stencil does not fit.  ``laplacian_matrix`` builds the same operator as a
sparse matrix acting on flattened arrays; the two are kept independent so that
each can serve as an oracle for the other.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..mesh import Mesh


def _values(f):
    return np.asarray(getattr(f, "values", f), dtype=float)


def laplacian(m: Mesh, f) -> np.ndarray:
    """Discrete Laplacian, defined everywhere except the outermost ring.

    Cartesian meshes use the 5-point stencil.  On the annulus the polar form
    ``w_rr + w_r / r + w_thth / r^2`` is discretized with centered differences.
    """
    w = _values(f).copy()
    if w.shape != m.shape:
        raise ValueError(f"field shape {w.shape} does not match mesh {m.shape}")
    m.sync_periodic(w)
    out = np.full_like(w, np.nan)
    c = w[1:-1, 1:-1]
    n, s = w[2:, 1:-1], w[:-2, 1:-1]
    e, o = w[1:-1, 2:], w[1:-1, :-2]
    if m.is_annulus:
        r = m.r[1:-1, None]
        out[1:-1, 1:-1] = ((n - 2 * c + s) / m.h1**2
                           + (n - s) / (2 * m.h1 * r)
                           + (e - 2 * c + o) / (r * m.h2) ** 2)
        m.sync_periodic(out)
    else:
        out[1:-1, 1:-1] = (n - 2 * c + s) / m.h1**2 + (e - 2 * c + o) / m.h2**2
    return out


def biharmonic(m: Mesh, f) -> np.ndarray:
    """``laplacian(laplacian(f))``; valid on interior and boundary points."""
    out = laplacian(m, laplacian(m, f))
    keep = np.zeros(m.shape, dtype=bool)
    keep[m.interior] = True
    if m.periodic2:
        keep[m.ghost:m.ghost + m.n1, :] = True
    out[~keep] = np.nan
    return out


def _row_range(m):
    """Array rows/columns on which the Laplacian stencil fits."""
    a = np.arange(1, m.shape[0] - 1)
    if m.periodic2:
        b = np.arange(m.ghost, m.ghost + m.n2)
    else:
        b = np.arange(1, m.shape[1] - 1)
    return np.meshgrid(a, b, indexing="ij")


def laplacian_matrix(m: Mesh) -> sp.csr_matrix:
    """Sparse Laplacian on flattened full arrays.

    Rows exist for every point where the stencil fits (periodic alias rows of
    the annulus are empty); columns referencing periodic aliases are mapped to
    their canonical points.
    """
    A, B = _row_range(m)
    A, B = A.ravel(), B.ravel()
    rows = m.flat(A, B)
    if m.is_annulus:
        r = m.r[A]
        cn = 1 / m.h1**2 + 1 / (2 * m.h1 * r)
        cs = 1 / m.h1**2 - 1 / (2 * m.h1 * r)
        ct = 1 / (r * m.h2) ** 2
        cc = -2 / m.h1**2 - 2 * ct
        ce = co = ct
    else:
        one = np.ones(A.size)
        cn = cs = one / m.h1**2
        ce = co = one / m.h2**2
        cc = -2 * (cn + ce)
    entries = [
        (rows, m.flat(A, B), cc),
        (rows, m.flat(A + 1, B), cn),
        (rows, m.flat(A - 1, B), cs),
        (rows, m.flat(A, B + 1), ce),
        (rows, m.flat(A, B - 1), co),
    ]
    I = np.concatenate([e[0] for e in entries])
    J = np.concatenate([e[1] for e in entries])
    V = np.concatenate([e[2] for e in entries])
    return sp.csr_matrix((V, (I, J)), shape=(m.size, m.size))


def normal_second_difference(m: Mesh, axis: int) -> sp.csr_matrix:
    """Second difference along one array axis (``D+D-``), as a sparse matrix."""
    A, B = _row_range(m)
    A, B = A.ravel(), B.ravel()
    rows = m.flat(A, B)
    h = m.h1 if axis == 0 else m.h2
    if axis == 0:
        nb = (m.flat(A + 1, B), m.flat(A - 1, B))
    else:
        nb = (m.flat(A, B + 1), m.flat(A, B - 1))
    if axis == 1 and m.is_annulus:
        scale = 1 / (m.r[A] * h) ** 2
    else:
        scale = np.full(A.size, 1 / h**2)
    I = np.concatenate([rows, rows, rows])
    J = np.concatenate([rows, nb[0], nb[1]])
    V = np.concatenate([-2 * scale, scale, scale])
    return sp.csr_matrix((V, (I, J)), shape=(m.size, m.size))
