class InvalidInput(ValueError):
    """Raised when an argument violates an operation's precondition."""


class ConfigError(InvalidInput):
    """Experiment configuration failed validation.

    ``problems`` maps each offending field name to a message.
    """

    def __init__(self, problems: dict[str, str]):
        self.problems = dict(problems)
        lines = [f"{k}: {v}" for k, v in sorted(self.problems.items())]
        super().__init__("invalid config:\n  " + "\n  ".join(lines))
