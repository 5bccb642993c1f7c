"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid track file, experiment config, or inconsistent parameters."""


class ContractViolation(RuntimeError):
    """An operation was called outside its precondition."""


class ParseError(ValueError):
    """A dataset file could not be parsed."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class InsufficientDataError(ValueError):
    """Not enough sessions to compute a statistic."""


class GenerationError(RuntimeError):
    """A scripted controller failed to produce a valid session."""
