"""Shared exception types."""


class ShapeError(ValueError):
    """Operand dimensions do not chain or match."""


class DomainError(ValueError):
    """Numeric argument outside its valid domain (negative variance, bad distribution)."""


class ArgumentError(ValueError):
    """Structurally invalid argument (empty batch, mismatched spec length)."""


class UnsupportedError(ValueError):
    """Operation not defined for this activation or architecture."""


class FormatError(ValueError):
    """Malformed external file; message carries byte offset or line number."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; message carries the step index."""
