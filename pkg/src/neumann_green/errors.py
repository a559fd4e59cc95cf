"""Exception hierarchy shared by all modules."""


class NeumannGreenError(Exception):
    """Base class for every error raised by this package."""


class MeshError(NeumannGreenError, ValueError):
    pass


class EllipticityViolation(NeumannGreenError):
    """A sampled frame breaks the ellipticity or boundedness inequality.

    ``witness`` is the tuple ``(x, t, xi, eta)`` at which it happened.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class CoercivityViolation(NeumannGreenError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class LinearSolveFailure(NeumannGreenError):
    pass


class MollifierUnresolvable(NeumannGreenError):
    pass


class ConservationViolation(NeumannGreenError):
    pass


class GridMismatch(NeumannGreenError):
    pass


class OutOfWindow(NeumannGreenError):
    pass


class NoValidSamples(NeumannGreenError):
    pass


class FitFailure(NeumannGreenError):
    pass


class LipschitzViolation(NeumannGreenError):
    pass


class EigenFailure(NeumannGreenError):
    pass


class TailTooLarge(NeumannGreenError):
    pass


class PreconditionError(NeumannGreenError):
    """A verifier was asked to run without the result it depends on."""


class ConfigError(NeumannGreenError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
