class LpcfmError(Exception):
    """Base error for everything raised by this package."""


class ParameterError(LpcfmError, ValueError):
    pass


class ShapeError(LpcfmError, ValueError):
    pass


class DegenerateLineError(LpcfmError, ValueError):
    """A line operation got a zero direction; use OT mode instead."""


class ConfigurationError(LpcfmError, ValueError):
    pass


class InputError(LpcfmError, ValueError):
    pass


class DivergenceError(LpcfmError, RuntimeError):
    """Non-finite loss, gradient or sampler state."""
