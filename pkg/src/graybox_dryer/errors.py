"""Exception hierarchy shared by all modules.

The CLI maps these onto process exit codes (see ``cli.EXIT_CODES``).
"""


class DryerError(Exception):
    """Base class for package errors."""


class DomainError(DryerError, ValueError):
    """Input outside the domain of a correlation or transform."""


class SchemaError(DryerError, ValueError):
    """Missing or malformed columns / misaligned series."""


class ConfigError(DryerError, ValueError):
    """Invalid or unknown configuration keys."""


class NumericalError(DryerError, RuntimeError):
    """Base for numerical failures (exit code 4)."""


class InstabilityError(NumericalError):
    """Simulation left the admissible state region or became non-finite."""


class CertificateError(NumericalError):
    """No Lyapunov certificate exists for the requested contraction level."""


class RankDeficiencyError(NumericalError):
    """Base feature block is rank deficient."""


class ConvergenceError(NumericalError):
    """Iterative method failed to reach its tolerance."""


class InfeasibleError(NumericalError):
    """QP constraint set is empty."""
