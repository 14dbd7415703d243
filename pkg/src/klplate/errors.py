"""Exception hierarchy shared by the solver modules and the CLI."""


class PlateError(Exception):
    """Base class for all solver errors."""


class ConfigurationError(PlateError, ValueError):
    """Invalid mesh, parameters, boundary specification or experiment config."""


class InstabilityError(PlateError):
    """The time integration blew up.

    Attributes
    ----------
    step : int
        Index of the step at which the blow-up was detected.
    time : float
        Simulation time at that step.
    """

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class SolverError(PlateError):
    """A linear or eigenvalue solve failed to converge or broke down."""
