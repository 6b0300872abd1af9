"""Where makla error objects are"""

from dol.errors import *  # start with the dol ones


class MaklaError(RuntimeError):
    """Base of makla's domain errors"""


class DimensionMismatchError(MaklaError, ValueError):
    """Raised when a vector's trailing length differs from the model dimension"""

    @staticmethod
    def raise_error(name, got, expected):
        raise DimensionMismatchError(
            f'{name} has trailing dimension {got}, but the model has d={expected}'
        )


class NonFiniteError(MaklaError, ValueError):
    """Raised when an input contains nan or inf"""

    @staticmethod
    def raise_error(name):
        raise NonFiniteError(f'{name} contains non-finite entries')


class DivergedTrajectoryError(MaklaError):
    """Raised when the energy error of a proposal is not finite"""


class AssumptionError(MaklaError):
    """Raised when hyperparameters fail the conditions a computation relies on"""

    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


class FixedPointError(MaklaError):
    """Raised when a fixed-point iteration does not converge within its cap"""


class SingularJacobianError(MaklaError):
    """Raised when the one-shot Jacobian system cannot be solved"""


class ResidualSamplerError(MaklaError):
    """Raised when residual rejection sampling exceeds its iteration cap"""


class ConfigError(MaklaError, ValueError):
    """Raised for unparsable or inconsistent run configurations"""
