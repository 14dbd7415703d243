"""Plate coefficients and external forcing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ConfigurationError


@dataclass(frozen=True)
class PlateParams:
    """Coefficients of the generalized Kirchhoff-Love equation

        rho_h w_tt = -K0 w + T lap(w) - D lap^2(w) - K1 w_t + T1 lap(w_t) + F.
    """

    rho_h: float = 1.0
    K0: float = 0.0
    T: float = 0.0
    D: float = 0.0
    K1: float = 0.0
    T1: float = 0.0
    nu: float = 0.3

    def __post_init__(self):
        if not self.rho_h > 0:
            raise ConfigurationError("rho_h must be positive")
        for name in ("K0", "T", "D", "K1", "T1"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if not 0 <= self.nu < 0.5:
            raise ConfigurationError("Poisson ratio must lie in [0, 0.5)")

    @classmethod
    def from_material(cls, E, thickness, density, nu, **coeffs):
        """Build parameters from Young's modulus, thickness and density.

        Uses the flexural rigidity ``D = E h^3 / (12 (1 - nu^2))``.
        """
        D = flexural_rigidity(E, thickness, nu)
        return cls(rho_h=density * thickness, D=D, nu=nu, **coeffs)

    @property
    def undamped(self):
        return self.K1 == 0 and self.T1 == 0


def flexural_rigidity(E, thickness, nu):
    return E * thickness**3 / (12.0 * (1.0 - nu**2))


class Forcing:
    """External load ``F(x, y, t)`` evaluated on mesh coordinate arrays."""

    def __call__(self, x, y, t):
        raise NotImplementedError

    @property
    def is_zero(self):
        return False


class ZeroForcing(Forcing):
    def __call__(self, x, y, t):
        return np.zeros(np.shape(x))

    @property
    def is_zero(self):
        return True


@dataclass(frozen=True)
class AnalyticForcing(Forcing):
    fn: Callable

    def __call__(self, x, y, t):
        return np.broadcast_to(np.asarray(self.fn(x, y, t), dtype=float), np.shape(x))


@dataclass(frozen=True)
class LocalizedSinusoid(Forcing):
    """``F0 * cos(xi t)`` (or ``sin``) on an axis-aligned box, zero elsewhere.

    ``region`` is ``(xa, xb, ya, yb)``; ``None`` loads the whole plate.
    """

    F0: float
    xi: float
    region: tuple | None = None
    phase: str = "cos"

    def __post_init__(self):
        if self.phase not in ("cos", "sin"):
            raise ConfigurationError(f"phase must be 'cos' or 'sin', got {self.phase!r}")

    def mask(self, x, y):
        if self.region is None:
            return np.ones(np.shape(x), dtype=bool)
        xa, xb, ya, yb = self.region
        eps = 1e-12
        return (x >= xa - eps) & (x <= xb + eps) & (y >= ya - eps) & (y <= yb + eps)

    def __call__(self, x, y, t):
        amp = self.F0 * (np.cos(self.xi * t) if self.phase == "cos" else np.sin(self.xi * t))
        return np.where(self.mask(x, y), amp, 0.0)
