"""
Exception hierarchy for the structural break monitor
"""


class CusumError(Exception):
    """Base class for all errors raised by this package"""


class DimensionError(CusumError, ValueError):
    """Array shapes do not agree"""


class DegenerateDataError(CusumError, ValueError):
    """Data cannot support the requested computation (singular design, exact fit, too few rows)"""


class IllConditionedError(CusumError, ValueError):
    """A matrix is too close to singular to invert or factor"""


class ConfigurationError(CusumError, ValueError):
    """Invalid combination of detector, boundary, horizon or parameters"""


class CriticalValueNotFoundError(CusumError, KeyError):
    """No critical value is available for the requested key"""

    def __str__(self):
        return str(self.args[0]) if self.args else "critical value not found"


class HorizonExceededError(CusumError, RuntimeError):
    """A monitor was asked to consume an observation past its fixed endpoint"""


class MonitorCapacityError(CusumError, RuntimeError):
    """The monitor retained more cumulative sums than its configured cap"""


class NoCrossingError(CusumError, RuntimeError):
    """No simulated path crossed the boundary, so a conditional mean is undefined"""

    def __init__(self, n_crossed: int, n_reps: int):
        self.n_crossed = n_crossed
        self.n_reps = n_reps
        super().__init__(f"no draw crossed the boundary ({n_crossed} of {n_reps} replications)")


class DatasetFormatError(CusumError, ValueError):
    """Input file or document cannot be parsed"""
