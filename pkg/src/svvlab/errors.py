"""Exception hierarchy shared by all svvlab modules."""


class SVVError(Exception):
    """Base class for every error raised by svvlab."""


class InvalidArgumentError(SVVError, ValueError):
    pass


class ValidationError(InvalidArgumentError):
    """A model or config parameter violates a model assumption.

    ``field`` names the offending config key (dotted path) when known.
    """

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class OutOfBandError(SVVError, ValueError):
    """The drift was evaluated outside the open band (phi(t), psi(t))."""


class IntegrationError(SVVError, RuntimeError):
    def __init__(self, message, path_index=None, step=None):
        self.path_index = path_index
        self.step = step
        super().__init__(f"{message} (path_index={path_index}, step={step})")


class NonConvergenceError(SVVError, RuntimeError):
    pass


class NoSolutionError(SVVError, ValueError):
    """Implied volatility does not exist for the given price."""


class SkewUndefinedError(SVVError, RuntimeError):
    pass


class InsufficientSignalError(SVVError, ValueError):
    pass


class UndefinedLimitError(SVVError, ZeroDivisionError):
    pass
