class ConfigError(ValueError):
    """Inputs that cannot describe a valid cluster, iteration or scenario."""


class ValidationError(Exception):
    """A schedule failed feasibility checks.

    ``violations`` holds the individual ``Violation`` records so callers can
    report every broken constraint, not just the first one.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"schedule failed validation: {lines}")


class DeadlockError(RuntimeError):
    def __init__(self, blocked):
        self.blocked = list(blocked)
        names = ", ".join(str(t) for t in self.blocked)
        super().__init__(f"simulation stalled with blocked tasks: {names}")


class InfeasibleError(RuntimeError):
    """No configuration in the search space satisfies the constraints."""
