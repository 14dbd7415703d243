"""Grid functions carried together with their mesh and time stamp."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..mesh import Mesh


@dataclass
class Field:
    """Values on every array point of ``mesh``, ghosts included."""

    mesh: Mesh
    values: np.ndarray = field(repr=False)
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.mesh.shape:
            raise ValueError(f"values of shape {self.values.shape} do not fit mesh {self.mesh.shape}")

    @classmethod
    def zeros(cls, mesh, time=0.0):
        return cls(mesh, np.zeros(mesh.shape), time)

    @classmethod
    def from_function(cls, mesh, fn, time=0.0):
        """Sample ``fn(x, y, t)`` at every array point."""
        return cls(mesh, mesh.sample(fn, time), time)

    def copy(self):
        return Field(self.mesh, self.values.copy(), self.time)

    @property
    def interior(self):
        return self.values[self.mesh.interior]
