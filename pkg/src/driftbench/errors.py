"""Exception hierarchy shared across the package."""


class DriftBenchError(Exception):
    """Base class for all package errors."""


class ValidationError(DriftBenchError, ValueError):
    """A structural invariant of an episode or stream is violated."""


class ConfigError(DriftBenchError, ValueError):
    pass


class FormatError(DriftBenchError, ValueError):
    """An episode or params file does not conform to its text format."""

    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.line = line
        self.field = field


class ShapeError(DriftBenchError, ValueError):
    pass


class NumericError(DriftBenchError, ArithmeticError):
    pass


class ContractError(DriftBenchError, RuntimeError):
    """A learner or tape was used outside its documented contract."""


class TrainingError(DriftBenchError, RuntimeError):
    def __init__(self, message, episode_index=None):
        if episode_index is not None:
            message = f"episode {episode_index}: {message}"
        super().__init__(message)
        self.episode_index = episode_index


class UndefinedMetricError(DriftBenchError, ValueError):
    pass
