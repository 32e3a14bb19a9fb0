"""Exception and warning types shared across the package."""


class RMHedgeError(Exception):
    """Base class for package errors."""


class NumericalDomain(RMHedgeError):
    """An integrand or coefficient produced a non-finite value."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class DomainEscape(RMHedgeError):
    """A shifted evaluation point left the grid's extrapolation band."""

    def __init__(self, message, point=None, axis=None):
        super().__init__(message)
        self.point = point
        self.axis = axis


class PathBlowup(RMHedgeError):
    """A simulated path became non-finite."""

    def __init__(self, message, path_index=None, time=None):
        super().__init__(message)
        self.path_index = path_index
        self.time = time


class SolverDiverged(RMHedgeError):
    """The PIDE solve produced a non-finite field."""

    def __init__(self, message, level=None):
        super().__init__(message)
        self.level = level


class PresetError(RMHedgeError):
    """Unknown preset, missing parameters or parameters violating integrability."""


class ConfigError(RMHedgeError):
    """Scenario configuration could not be parsed or validated."""

    def __init__(self, message, key=None, line=None):
        loc = ""
        if key is not None:
            loc += f" [key: {key}]"
        if line is not None:
            loc += f" [line {line}]"
        super().__init__(message + loc)
        self.key = key
        self.line = line


class StepTooCoarse(UserWarning):
    """Total transition intensity times the step exceeds 0.5."""


class StabilityWarning(UserWarning):
    """Explicit part of the IMEX step exceeds its stability bound."""
