"""Error taxonomy shared by all modules.

Every raise site uses one of these so callers (and the CLI exit-code
logic) can tell configuration mistakes apart from numeric trouble and
from honest budget exhaustion.
"""


class RatnearError(Exception):
    """Base class for everything raised on purpose by this package."""


class InvalidDimensionError(RatnearError, ValueError):
    """Dimensions out of range or mutually inconsistent (need 1 <= d < n)."""


class CapabilityError(RatnearError, ValueError):
    """Requested order/feature exceeds what the map can certify."""


class PreconditionError(RatnearError, ValueError):
    """Parameter outside the domain a formula is stated for."""


class SingularMatrixError(RatnearError, ValueError):
    """Matrix inversion or dualisation hit a (near-)singular input."""


class NumericOverflowError(RatnearError, OverflowError):
    """A scale factor left the representable floating-point range."""


class BudgetExceededError(RatnearError, RuntimeError):
    """Enumeration would exceed the configured evaluation budget."""


class ConfigError(RatnearError, ValueError):
    """Bad config file, bad flag value, or missing required key."""


class IllConditionedWarning(RuntimeWarning):
    """Float-mode matrix work above the condition-number guard."""
