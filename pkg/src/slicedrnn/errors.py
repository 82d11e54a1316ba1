"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not match the operation's contract."""


class DivisibilityError(ValueError):
    """Sequence length is not divisible by the slice fan-out."""


class VocabularyError(ValueError):
    """Token id is outside the model's vocabulary."""


class ConsistencyError(ValueError):
    """A trace or checkpoint does not match the model it is used with."""


class ParseError(ValueError):
    """A data file could not be parsed; message carries the line number."""


class HarnessError(RuntimeError):
    """The benchmark harness cannot produce a trustworthy measurement."""
