"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class QevalError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(QevalError):
    """A record violates one of its invariants.

    The message always names the offending field and the rule it broke.
    """

    def __init__(self, field: str, rule: str):
        self.field = field
        self.rule = rule
        super().__init__(f"{field}: {rule}")


class BackendError(QevalError):
    """Transport-level failure talking to a model backend (after retries)."""


class ProtocolError(QevalError):
    """The backend answered, but the response cannot be interpreted."""


class DecompositionError(QevalError):
    """Long-prompt decomposition produced no usable output."""


class MetricError(QevalError):
    """A correlation metric is undefined for the given inputs."""


class AggregationError(QevalError):
    """Not enough annotations to aggregate a mean opinion score."""
