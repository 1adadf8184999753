"""Exception types shared across the package."""


class FlexaggError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(FlexaggError):
    """Invalid user-supplied configuration or input file (CLI exit code 1)."""


class DimensionMismatch(FlexaggError):
    """Arrays whose shapes disagree with the declared layout."""


class InconsistentLayout(FlexaggError):
    """Variable layout is not a bijection or references unknown connections."""


class SingularAdmittance(FlexaggError):
    """The load-partition admittance block is singular (disconnected feeder)."""


class NonConvergence(FlexaggError):
    """Fixed-point power flow failed to reach the residual tolerance."""


class InfeasibleParams(FlexaggError):
    """Device parameters are internally contradictory (e.g. lower bound above upper)."""


class BadArity(FlexaggError):
    """Polygonization side count below 4 or odd."""


class ConicPresent(FlexaggError):
    """Operation requires a purely polyhedral model but conic blocks are present."""


class ModelInfeasible(FlexaggError):
    """The assembled operating constraints admit no solution (CLI exit code 2)."""


class BigMTooSmall(FlexaggError):
    """Linearization bound saturated at optimum even after automatic retries."""


class MaxRoundsExceeded(FlexaggError):
    """Scenario generation loop hit its round cap without converging."""


class NodeLimitExceeded(FlexaggError):
    """Branch and bound exhausted its node budget."""


class NumericalError(FlexaggError):
    """Generic numerical failure (CLI exit code 3)."""
