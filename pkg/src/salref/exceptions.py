class InputError(ValueError):
    """Caller supplied data violating an operation's preconditions."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class StateError(RuntimeError):
    """Operation called in a state that does not admit it."""


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, step, dump_path=None):
        self.step = step
        self.dump_path = dump_path
        msg = f"non-finite loss at step {step}"
        if dump_path is not None:
            msg += f" (diagnostic dump: {dump_path})"
        super().__init__(msg)
