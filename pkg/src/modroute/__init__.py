"""Reliability-aware modality routing with a dual-loop memory hierarchy."""
from .backends import (
    BackendError,
    FallbackBackend,
    RemoteBackend,
    RuleBasedBackend,
    ScriptedBackend,
    SchemaError,
)
from .core import (
    MODALITIES,
    DecisionSource,
    DiagnosticFrame,
    Modality,
    RouterDecision,
    RoutingConfig,
    RoutingState,
    read_trace,
    write_trace,
)
from .dual_loop import (
    HistoryWindow,
    LoopSchedule,
    run_episode,
    single_loop_episode,
    static_fusion_episode,
)
from .engine import combine, ema_step, route_step
from .episode import EpisodeLog, EpisodeRecord
from .knowledge import KnowledgeEntry, KnowledgeRepository, consolidate
from .memory import ComponentKind, ExpiryEvent, MemoryStore, RecallKey, Trigger
from .metrics import MetricsReport, compare_switching, compute_report
from .stress import PerturbationKind, PerturbationSpec, canonical_table3_trace, generate_trace

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
