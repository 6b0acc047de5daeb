"""Exception hierarchy.

The CLI maps :class:`ConfigError` to exit code 2 and :class:`NumericalError`
to exit code 3.
"""


class SbcError(Exception):
    category = "error"


class ConfigError(SbcError):
    category = "config"


class ExprSyntaxError(ConfigError):
    """Malformed expression text. ``offset`` is a byte offset into the source."""

    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} at offset {offset}")


class NumericalError(SbcError):
    category = "numerical"


class ExprEvalError(NumericalError):
    """Domain error while evaluating an expression (``offset`` locates the node)."""

    def __init__(self, message: str, offset: int = -1):
        self.offset = offset
        where = f" (node at offset {offset})" if offset >= 0 else ""
        super().__init__(message + where)


class GainTooSmallError(NumericalError):
    def __init__(self, subsystem: int, value: float, t: float | None = None):
        self.subsystem = subsystem
        self.value = value
        self.t = t
        when = "" if t is None else f" at t={t:.6g}"
        super().__init__(f"|g_{subsystem}| = {abs(value):.3g} below threshold{when}")


class NonFiniteError(NumericalError):
    def __init__(self, message: str, t: float | None = None, channel: str | None = None):
        self.t = t
        self.channel = channel
        super().__init__(message)
