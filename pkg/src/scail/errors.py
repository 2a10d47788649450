"""Exception hierarchy shared by all modules."""


class ScailError(Exception):
    pass


class ShapeError(ScailError, ValueError):
    pass


class InputError(ScailError, ValueError):
    pass


class ConfigurationError(ScailError, ValueError):
    pass


class ConsistencyError(ScailError, RuntimeError):
    pass


class SingularStatisticsError(ScailError, ArithmeticError):
    """A zero rank mean would divide a nonzero weight."""

    def __init__(self, class_id, rank):
        self.class_id = class_id
        self.rank = rank
        super().__init__(f"class {class_id}: initial rank mean is zero at rank {rank} for a nonzero weight")


class ParseError(ScailError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StateFailure(ScailError, RuntimeError):
    """Wraps any error raised while processing one incremental state."""

    def __init__(self, state, cause):
        self.state = state
        self.cause = cause
        super().__init__(f"state {state} failed: {cause}")
