"""Exception types.

Each error also derives from the built-in exception it specialises, so callers
may catch `ValueError` as they would for any numpy/scipy argument error.
"""


class DSTAError(Exception):
    pass


class PreconditionError(DSTAError, ValueError):
    pass


class DomainError(DSTAError, ValueError):
    pass


class ConfigurationError(DSTAError, ValueError):
    pass


class SizeError(DSTAError, ValueError):
    pass


class OracleError(DSTAError, ArithmeticError):
    pass
