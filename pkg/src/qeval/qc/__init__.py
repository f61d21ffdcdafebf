"""Sample & Scrutinize annotation quality control: protocol, store, service."""

from .protocol import (
    GateResult,
    QcConfig,
    aggregate_mos,
    gate_batch,
    plan_campaign,
    sample_golden,
    variance_stats,
)

__all__ = [
    "GateResult",
    "QcConfig",
    "aggregate_mos",
    "gate_batch",
    "plan_campaign",
    "sample_golden",
    "variance_stats",
]
