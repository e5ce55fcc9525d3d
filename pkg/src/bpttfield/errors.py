"""Exception hierarchy shared by the package."""


class BPTTFieldError(Exception):
    pass


class SpecError(BPTTFieldError, ValueError):
    """A network, simulator or loss specification is malformed."""


class InputError(BPTTFieldError, ValueError):
    """Arrays passed to an operation have the wrong shape or kind."""


class NumericalError(BPTTFieldError, ArithmeticError):
    """Non-finite values where finite ones are required.

    ``step`` is the rollout step (or sample index) at which the problem was
    detected, when known.
    """

    def __init__(self, message, step=None):
        self.detail = message
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class SingularityError(NumericalError):
    """Two agents occupy exactly the same position."""


class ConfigError(BPTTFieldError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class RunAborted(BPTTFieldError, RuntimeError):
    def __init__(self, message, records=None, params=None):
        super().__init__(message)
        self.records = records or []
        self.params = params


class NonFiniteWarning(RuntimeWarning):
    pass
