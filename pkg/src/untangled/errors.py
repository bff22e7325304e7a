"""Exception taxonomy shared by all modules.

Exit-code mapping used by the CLI: configuration problems exit with 2,
numerical/stage failures with 3, certificate violations with 1.
"""


class UntangledError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(UntangledError, ValueError):
    """Malformed or unresolvable scenario configuration."""


class DomainError(UntangledError, ValueError):
    """A point lies outside the domain where an object is defined."""


class DataError(UntangledError, ValueError):
    """Input data could not be evaluated or has inconsistent shape."""


class NumericalError(UntangledError, RuntimeError):
    """A numerical computation produced an unusable result."""


class AssemblyError(NumericalError):
    """A discrete system could not be assembled (degenerate mesh etc.)."""


class SolverError(NumericalError):
    """A linear solve failed or did not reach the required residual."""


class InfeasibleError(NumericalError):
    """No admissible continuation exists (velocity envelope incompatible
    with the tangent cone of the domain)."""


class SamplingWarning(UserWarning):
    """A sampling-based estimate violated a monotonicity or soundness
    property beyond slack; the result is still returned."""
