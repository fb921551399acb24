class OcpFemError(Exception):
    """Base class for errors raised by ocpfem."""


class MeshError(OcpFemError, ValueError):
    pass


class CoefficientError(OcpFemError, ValueError):
    pass


class ConvergenceError(OcpFemError, RuntimeError):
    """An iterative method did not reach its tolerance.

    ``history`` holds the residuals recorded up to the failure.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class ConfigError(OcpFemError, ValueError):
    pass
