"""Exception types shared across derlab."""


class DerlabError(Exception):
    """Base class for all errors raised by derlab."""


class AtomMismatch(DerlabError, ValueError):
    """Two categorical distributions were compared on different atom grids."""


class AbsoluteContinuity(DerlabError, ValueError):
    """The reference distribution puts zero mass where the other does not."""


class EpsilonOutOfRange(DerlabError, ValueError):
    pass


class ShapeMismatch(DerlabError, ValueError):
    pass


class InvalidStateAction(DerlabError, IndexError):
    pass


class NegativeEntropy(DerlabError, ValueError):
    pass


class EntropyUnbounded(DerlabError, ArithmeticError):
    """A cross-entropy exceeded the configured bound M."""


class NonConvergence(DerlabError, RuntimeError):
    pass


class CacheMismatch(DerlabError, ValueError):
    pass


class ClippedDecomposition(DerlabError, ValueError):
    """The exact decomposition of a target needed clipping, so the
    decomposed loss is ill-posed for that sample."""


class ConfigError(DerlabError, ValueError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownKey(ConfigError):
    pass


class MissingSection(ConfigError):
    pass
