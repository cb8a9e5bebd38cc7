"""Force-informed score matching for Boltzmann-distributed configurations."""
__version__ = "0.1.0"

from .errors import ConfigError, DataError, DomainError, FormatError, NumericalError, PSMLabError, SingularityError
from .kernels import BACKEND

__all__ = [
    "BACKEND",
    "ConfigError",
    "DataError",
    "DomainError",
    "FormatError",
    "NumericalError",
    "PSMLabError",
    "SingularityError",
    "__version__",
]
