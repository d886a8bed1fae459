"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ValidationError -> 2,
NumericalError -> 3, BudgetExceededError -> 4.
"""


class AndlabError(Exception):
    pass


class ValidationError(AndlabError, ValueError):
    """A precondition on user input was violated."""


class NumericalError(AndlabError, RuntimeError):
    """A numerical contract (residual, singularity, divergence) failed."""


class SingularEnergyError(NumericalError):
    """Spectral parameter too close to an eigenvalue for a stable solve."""


class DivergenceError(NumericalError):
    """An iteration produced values beyond the divergence guard."""


class BudgetExceededError(AndlabError, RuntimeError):
    """A size or scale exceeded the configured computational budget."""
