"""Exception hierarchy. Each family maps onto one CLI exit code."""


class PSMLabError(Exception):
    exit_code = 1


class ConfigError(PSMLabError, ValueError):
    """Invalid configuration or parameter combination."""

    exit_code = 2


class DataError(PSMLabError, ValueError):
    """Input data is missing, malformed or inconsistent."""

    exit_code = 3


class FormatError(DataError):
    """Bytes on disk do not follow the expected container/array format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(PSMLabError, ArithmeticError):
    """Non-finite values, failed quadrature convergence and similar."""

    exit_code = 4


class DomainError(PSMLabError, ValueError):
    """Argument outside the domain where a function is defined."""

    exit_code = 2


class SingularityError(NumericalError):
    """Two particles coincide, so pair energies are undefined."""

    def __init__(self, i, j, distance):
        super().__init__(f"particles {i} and {j} coincide (distance {distance:.3e})")
        self.pair = (i, j)
        self.distance = distance
