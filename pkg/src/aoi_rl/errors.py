"""Exception types shared across the package."""


class InvalidConfigError(ValueError):
    """A scenario description violates a config invariant."""


class SizeLimitError(RuntimeError):
    """State space (or policy space) exceeds an explicit size guard."""


class InfeasibleActionError(RuntimeError):
    """A policy emitted an action outside the feasible set of the state."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its sweep limit before reaching tolerance."""


class ContractError(RuntimeError):
    """Mismatched dimensions or otherwise inconsistent inputs."""
