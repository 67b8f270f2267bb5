"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so raising the right class
matters: ValidationError for bad inputs (files, labels, flag values that
pass parsing but fail semantic checks) and NumericalError for failures of
the numerics themselves (singular systems, non-finite losses).
"""


class ValidationError(ValueError):
    """Input data or configuration violates a documented contract."""


class NumericalError(ArithmeticError):
    """A numerical procedure failed (singular system, divergence, non-finite loss)."""
