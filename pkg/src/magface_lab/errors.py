"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the function."""


class ConfigurationError(ValueError):
    """A configuration cannot produce a well-defined computation."""


class DegenerateAggregationError(DomainError):
    """Feature aggregation produced a (near) zero vector."""


class StatisticsError(ValueError):
    """Too few samples for the requested statistic."""


class PropertyViolation(RuntimeError):
    """A certified property failed; ``witnesses`` holds the offending points."""

    def __init__(self, message, witnesses=None):
        super().__init__(message)
        self.witnesses = list(witnesses or [])


class TrainingDivergence(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, message=None):
        super().__init__(message or f"non-finite loss at epoch {epoch}")
        self.epoch = epoch
