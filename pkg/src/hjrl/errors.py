"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates an operation's precondition."""


class ParseError(ValueError):
    """A field, checkpoint or config file is malformed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingDiverged(RuntimeError):
    """Raised by the learner's divergence guard."""
