"""Exception types shared across the kernel modules."""


class KernelError(ValueError):
    """Base class for all domain errors raised by this package."""


class ShapeMismatchError(KernelError):
    """Operands whose shapes (or bin layouts) do not agree."""


class TensorFormatError(KernelError):
    """Malformed tensor file. `code` identifies the violation."""

    BAD_MAGIC = "bad-magic"
    BAD_RANK = "bad-rank"
    BAD_DIMS = "bad-dims"
    TRUNCATED = "truncated"
    NON_FINITE = "non-finite"
    INVALID_SHAPE = "invalid-shape"

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code
