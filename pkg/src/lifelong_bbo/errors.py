"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with inputs that break its preconditions."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class BudgetExhausted(RuntimeError):
    """A problem instance was asked for more evaluations than its budget allows."""


class DegenerateRange(ValueError):
    """Normalization range collapsed (worst value not above the optimum)."""


class TrainingDivergence(RuntimeError):
    """A training loss became non-finite."""
