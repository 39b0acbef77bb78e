"""Exception hierarchy shared by every module."""


class TabGuardError(Exception):
    """Base class for all library errors."""


class SchemaError(TabGuardError):
    pass


class DataError(TabGuardError):
    pass


class LabelError(DataError):
    pass


class ParameterError(TabGuardError, ValueError):
    pass


class ShapeError(TabGuardError, ValueError):
    pass


class TrainingError(TabGuardError):
    pass


class FormatError(TabGuardError):
    """Corrupt or incompatible checkpoint / report file."""


class MetricError(TabGuardError):
    """Metric undefined on the given input (e.g. a single class present)."""


class SolverError(TabGuardError):
    pass


class ProviderError(TabGuardError):
    """LLM provider failed or returned an unusable response."""


class StatisticsError(TabGuardError):
    pass


class AssemblyError(TabGuardError):
    pass


class AggregateError(TabGuardError):
    """No usable per-instance result to aggregate."""
