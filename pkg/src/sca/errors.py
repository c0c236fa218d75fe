class ContractError(ValueError):
    """An operation was called with inputs that violate its preconditions."""


class ConfigError(ValueError):
    """Invalid user-facing configuration (hyperparameters, generator args)."""


class ParseError(ValueError):
    """Malformed input file; the message names the offending line."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class SamplingUnavailable(RuntimeError):
    """Not enough eligible classes to build a PK batch."""


class NonFiniteLoss(RuntimeError):
    """Training produced a NaN/Inf loss; carries a diagnostic snapshot."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
