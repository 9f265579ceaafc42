"""Exception types shared across the package."""


class UsageError(ValueError):
    """A function was called with arguments violating its precondition."""


class ConfigurationError(ValueError):
    """Plant or contract configuration is physically or logically infeasible."""


class ProtocolError(RuntimeError):
    """A resilience manager received a message it cannot legally handle."""


class ScenarioError(ValueError):
    """A scenario document failed validation.

    ``path`` locates the offending field (e.g. ``faults[2].target``).
    """

    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)
