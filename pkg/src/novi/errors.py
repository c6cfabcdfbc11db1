"""Exception hierarchy shared by every module."""


class NoviError(Exception):
    pass


class DimensionError(NoviError, ValueError):
    """Operand shapes do not conform."""


class InputError(NoviError, ValueError):
    """An argument is outside the operation's domain."""


class NumericalError(NoviError, ArithmeticError):
    """A factorization failed or a non-finite value appeared."""


class ContractError(NoviError, TypeError):
    """A caller broke an API contract (wrong tape, unsupported op, ...)."""


class FormatVersionError(NoviError, ValueError):
    """A checkpoint was written by an incompatible format version."""
