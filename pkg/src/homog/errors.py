"""Exception hierarchy shared by the package.

Each class carries a stable CLI exit code so the command line front end can
map failures without inspecting messages.
"""


class HomogError(Exception):
    exit_code = 1


class ValidationError(HomogError, ValueError):
    exit_code = 2


class AliasingError(HomogError, ValueError):
    """Drift Fourier support does not fit inside the basis cutoff."""

    exit_code = 4


class SolverError(HomogError, RuntimeError):
    exit_code = 4


class DegeneracyError(SolverError):
    """A second near-null vector was found; the truncation is too coarse."""


class TruncationError(SolverError):
    """Residual above tolerance; carries suggested larger cutoffs."""

    def __init__(self, message, suggested=None):
        super().__init__(message)
        self.suggested = suggested


class IntegrationError(HomogError, RuntimeError):
    exit_code = 4

    def __init__(self, message, path_index=None, time=None):
        super().__init__(message)
        self.path_index = path_index
        self.time = time


class StatisticalPowerError(HomogError, ValueError):
    """Too few samples (or too much noise) for a meaningful estimate."""

    exit_code = 5


class UnsupportedError(HomogError, ValueError):
    exit_code = 2
