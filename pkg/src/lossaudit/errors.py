"""Exception hierarchy shared by all lossaudit modules.

Two broad families matter to callers (and to the CLI exit codes):
input problems (unreadable or corrupt data, bad configuration) and
statistical guards (an estimator or test refusing to produce a number
it cannot back up).
"""


class LossAuditError(Exception):
    """Base class for all lossaudit errors."""


class InputError(LossAuditError):
    """Unusable input: unreadable streams, corrupt rows, bad configs."""


class StatGuardError(LossAuditError):
    """A statistical guard tripped: the requested quantity is undefined."""


class UnreadableStream(InputError):
    """The byte stream could not be read or decoded at all."""


class BadRowRatioExceeded(InputError):
    """Malformed rows exceeded the configured tolerance; input is corrupt."""

    def __init__(self, bad_rows: int, total_rows: int, threshold: float):
        self.bad_rows = bad_rows
        self.total_rows = total_rows
        self.threshold = threshold
        super().__init__(
            f"{bad_rows} malformed rows out of {total_rows} "
            f"({bad_rows / total_rows:.2%} > {threshold:.2%} allowed)"
        )


class NoExpectedEvents(StatGuardError):
    """No ground-truth denominator: empty anchor set or every sequence excluded."""


class MethodMismatch(LossAuditError):
    """Attempted to merge loss estimates produced by different methods."""


class DegenerateSample(StatGuardError):
    """A statistical test was asked to run on an empty arm."""


class DegenerateVariance(StatGuardError):
    """Standard error is zero; the metric is constant and z is undefined."""


class InsufficientData(StatGuardError):
    """Too few observations to estimate the requested stratum."""


class InvalidSpec(InputError):
    """A synthetic-data spec fails validation."""


class UnknownEventType(InputError):
    """A loss mechanism or metric references an event type the log lacks."""


class MissingLossEstimate(InputError):
    """A scorecard metric's source event has no loss estimate."""


class UnknownVariant(InputError):
    """The requested control/treatment labels do not appear in the records."""
