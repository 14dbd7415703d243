"""Time-step selection from the amplification factor of the predictor-corrector.

On the test equation ``y' = lambda y`` with ``z = lambda dt`` the AB2/AM2
predictor-corrector has the characteristic roots

    zeta(z) = (1 + z + 3/4 z^2 +- sqrt((1 + z + 3/4 z^2)^2 - z^2)) / 2.

Its stability region is approximated from inside by the half super-ellipse
``|Re z / a|^n + |Im z / b|^n <= 1, Re z <= 0``.  The time step places the
largest eigenvalue of the semi-discrete system on that curve, scaled by a
safety factor ``C_sf``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigurationError
from .fdops.params import PlateParams
from .mesh import Mesh, min_physical_spacing

CSF_PC22 = 0.9
CSF_NB2 = 90.0


@dataclass(frozen=True)
class SuperEllipse:
    a: float = 1.75
    b: float = 1.2
    n: float = 1.5

    def __post_init__(self):
        if min(self.a, self.b, self.n) <= 0:
            raise ConfigurationError("super-ellipse parameters must be positive")

    def boundary(self, samples=1000):
        """Points on the left half of the curve, from ``+ib`` through ``-a`` to ``-ib``."""
        phi = np.linspace(np.pi / 2, 3 * np.pi / 2, samples)
        c, s = np.cos(phi), np.sin(phi)
        x = self.a * np.sign(c) * np.abs(c) ** (2 / self.n)
        y = self.b * np.sign(s) * np.abs(s) ** (2 / self.n)
        return x + 1j * y


class Regime(str, enum.Enum):
    """Damping regime of the worst mode; the critical case counts as overdamped."""

    UNDERDAMPED = "underdamped"
    OVERDAMPED = "overdamped"


@dataclass(frozen=True)
class SymbolBounds:
    K_hat_max: float
    B_hat_max: float
    lambda_max: complex
    regime: Regime


def pc22_roots(z):
    z = np.asarray(z, dtype=complex)
    q = 1 + z + 0.75 * z**2
    disc = np.sqrt(q**2 - z**2)
    return 0.5 * (q + disc), 0.5 * (q - disc)


def pc22_amplification(z):
    """Largest root modulus of the characteristic equation at ``z``."""
    zp, zm = pc22_roots(z)
    out = np.maximum(np.abs(zp), np.abs(zm))
    return float(out) if np.ndim(out) == 0 else out


def in_region(z, e: SuperEllipse = SuperEllipse()):
    z = complex(z)
    return z.real <= 0 and abs(z.real / e.a) ** e.n + abs(z.imag / e.b) ** e.n <= 1


def imaginary_axis_extent(lo=0.5, hi=3.0, xtol=1e-14):
    """Largest ``y`` with ``|zeta(iy)| <= 1``, located by bisection on ``[lo, hi]``."""
    g = lambda y: pc22_amplification(1j * y) - 1.0
    if g(lo) > 0 or g(hi) < 0:
        raise ValueError("bracket does not contain the stability limit")
    return brentq(g, lo, hi, xtol=xtol)


def fourier_symbol_max(p: PlateParams, h1, h2) -> SymbolBounds:
    """Maximum symbols of ``K_h / rho_h`` and ``B_h / rho_h`` and the worst eigenvalue."""
    if h1 <= 0 or h2 <= 0:
        raise ConfigurationError("grid spacings must be positive")
    s = 1 / h1**2 + 1 / h2**2
    K = (p.K0 + 4 * p.T * s + 16 * p.D * s**2) / p.rho_h
    B = (p.K1 + 4 * p.T1 * s) / p.rho_h
    half = B / 2
    if half**2 < K:
        lam = complex(-half, np.sqrt(K - half**2))
        regime = Regime.UNDERDAMPED
    else:
        lam = complex(-B, 0.0)
        regime = Regime.OVERDAMPED
    return SymbolBounds(K, B, lam, regime)


def dt_from_lambda(lam, C_sf, e: SuperEllipse = SuperEllipse()):
    if C_sf <= 0:
        raise ConfigurationError("stability factor must be positive")
    lam = complex(lam)
    r = abs(lam.real / e.a) ** e.n + abs(lam.imag / e.b) ** e.n
    if r == 0:
        raise ConfigurationError("no dynamics: the worst-case eigenvalue is zero")
    return C_sf * r ** (-1 / e.n)


def stable_dt(p: PlateParams, m: Mesh, C_sf=CSF_PC22, e: SuperEllipse = SuperEllipse()):
    """Time step ``C_sf * (|Re l / a|^n + |Im l / b|^n)^(-1/n)`` for the worst mode ``l``.

    Curvilinear meshes use their smallest physical spacing in both directions.
    """
    if m.is_annulus:
        h = min_physical_spacing(m)
        h1 = h2 = h
    else:
        h1, h2 = m.h1, m.h2
    bounds = fourier_symbol_max(p, h1, h2)
    return dt_from_lambda(bounds.lambda_max, C_sf, e)
