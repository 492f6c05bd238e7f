"""Exception hierarchy shared by every stage of the pipeline."""


class PerfGATError(Exception):
    """Base class for all package errors."""


class DimensionError(PerfGATError, ValueError):
    pass


class DomainError(PerfGATError, ValueError):
    pass


class DegenerateVectorError(DomainError):
    pass


class ContractError(PerfGATError, ValueError):
    pass


class NumericError(PerfGATError, FloatingPointError):
    pass


class ConfigError(PerfGATError, ValueError):
    pass


class DataError(PerfGATError):
    pass


class DegenerateSeriesError(DataError, ValueError):
    pass


class GeometryError(DataError, ValueError):
    pass


class EmptyGraphError(DataError, ValueError):
    pass


class StructuralCollapseError(PerfGATError, RuntimeError):
    pass


class AugmentationError(PerfGATError, ValueError):
    pass


class StratificationError(PerfGATError, ValueError):
    pass


class DivergenceError(NumericError):
    """Non-finite training loss; carries the epoch and batch where it happened."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class CompatibilityError(DataError, ValueError):
    pass


class UndefinedMetricError(PerfGATError, ValueError):
    pass
