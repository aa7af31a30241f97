"""Deterministic modality routing: set selection, weighting, hysteresis, EMA.

A routing step runs, in order: recall lookup, backend scoring (skipped on a
recall hit), usage/reliability set construction with intersection-then-
fallback, proportional weight normalisation over the fused set, hysteresis
latching of activation states, EMA smoothing of the weights, active-set
gating, and the memory commit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, NamedTuple, Protocol

import numpy as np

from .core import (
    MODALITIES,
    DecisionSource,
    DiagnosticFrame,
    Modality,
    RouterDecision,
    RoutingConfig,
    RoutingState,
    mask_to_set,
    set_to_mask,
)
from .memory import (
    ComponentKind,
    ExpiryEvent,
    MemoryEvent,
    MemoryStore,
    RecallKey,
    Trigger,
)

ALL_MODALITIES = frozenset(MODALITIES)


class Backend(Protocol):
    def score(self, frame: DiagnosticFrame, context: Any = None) -> RouterDecision: ...


@dataclass(frozen=True)
class HysteresisBand:
    on: np.ndarray
    off: np.ndarray

    @classmethod
    def from_config(cls, config: RoutingConfig) -> "HysteresisBand":
        return cls.from_thresholds(config.theta, config.delta)

    @classmethod
    def from_thresholds(cls, theta, delta: float) -> "HysteresisBand":
        """A scalar ``theta`` is shared by all modalities; an array keeps its shape."""
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 0:
            theta = np.full(len(MODALITIES), float(theta))
        return cls(on=theta + delta, off=theta - delta)


class SetSelection(NamedTuple):
    usage: frozenset[Modality]
    reliable: frozenset[Modality]
    fused: frozenset[Modality]
    fallback_used: bool


def build_sets(decision: RouterDecision, thresholds) -> SetSelection:
    theta = np.broadcast_to(np.asarray(thresholds, dtype=float), (len(MODALITIES),))
    usage = mask_to_set(decision.u == 1)
    reliable = mask_to_set(decision.r >= theta)
    fused = usage & reliable
    fallback = not fused
    if fallback:
        fused = reliable
    return SetSelection(usage, reliable, fused, fallback)


def normalize_weights(r, fused: frozenset[Modality]) -> np.ndarray:
    """Proportional weights over ``fused``; zero elsewhere.

    A fused set whose reliabilities sum to zero gets uniform weights.
    """
    r = np.asarray(r, dtype=float)
    mask = set_to_mask(fused)
    w = np.zeros(len(MODALITIES))
    if not mask.any():
        return w
    total = r[mask].sum()
    if total > 0:
        w[mask] = r[mask] / total
    else:
        w[mask] = 1.0 / mask.sum()
    return w


def initial_states(r, thresholds) -> np.ndarray:
    return (np.asarray(r, dtype=float) >= np.asarray(thresholds, dtype=float)).astype(int)


def hysteresis_step(prev_s, r, band: HysteresisBand) -> np.ndarray:
    prev_s = np.asarray(prev_s, dtype=int)
    r = np.asarray(r, dtype=float)
    s = prev_s.copy()
    s[(prev_s == 0) & (r >= band.on)] = 1
    s[(prev_s == 1) & (r <= band.off)] = 0
    return s


def ema_alpha(dt: float, tau: float) -> float:
    if dt <= 0 or tau <= 0:
        raise ValueError("dt and tau must be > 0")
    return -math.expm1(-dt / tau)


def ema_step(prev, w, dt: float, tau: float) -> np.ndarray:
    """One EMA update. ``prev=None`` marks the first step, which returns ``w``."""
    w = np.asarray(w, dtype=float)
    if prev is None:
        return w.copy()
    a = ema_alpha(dt, tau)
    return a * w + (1.0 - a) * np.asarray(prev, dtype=float)


def gate_active_set(fused: frozenset[Modality], states) -> frozenset[Modality]:
    latched = mask_to_set(np.asarray(states) == 1)
    gated = fused & latched
    return gated if gated else fused


def combine(decision: RouterDecision, prev: RoutingState | None, config: RoutingConfig,
            dt: float) -> RoutingState:
    """Pure routing arithmetic for one decision (no memory, no backend)."""
    sel = build_sets(decision, config.theta)
    w = normalize_weights(decision.r, sel.fused)
    if prev is None:
        s = initial_states(decision.r, config.theta)
        w_smooth = ema_step(None, w, dt, config.tau)
    else:
        s = hysteresis_step(prev.s, decision.r, HysteresisBand.from_config(config))
        w_smooth = ema_step(prev.w_smooth, w, dt, config.tau)
    degraded = not sel.fused
    if degraded:
        active = prev.active_set if prev is not None and prev.active_set else ALL_MODALITIES
    else:
        active = gate_active_set(sel.fused, s)
    return RoutingState(
        step=0 if prev is None else prev.step + 1,
        usage_set=sel.usage,
        reliable_set=sel.reliable,
        fused_set=sel.fused,
        states=tuple(s),
        weights=tuple(w),
        smoothed=tuple(w_smooth),
        active_set=active,
        fallback_used=sel.fallback_used,
        degraded=degraded,
    )


@dataclass(frozen=True)
class StepResult:
    state: RoutingState
    decision: RouterDecision
    events: tuple[MemoryEvent, ...] = ()
    recall_attempted: bool = False
    recall_hit: bool = False


def route_step(
    frame: DiagnosticFrame,
    prev: RoutingState | None,
    backend: Backend,
    memory: MemoryStore | None,
    config: RoutingConfig,
    *,
    dt: float | None = None,
    now: float | None = None,
    scene_id: str = "",
    recall: bool = True,
) -> StepResult:
    """Run one full routing step; see module docstring for the order.

    ``dt`` defaults to the reactive period. ``now`` defaults to the frame
    timestamp and stamps memory events and recall entries. With
    ``memory=None`` routing is pure; with ``recall=False`` the store is still
    written but never consulted for cached decisions.
    """
    dt = config.dt_fast if dt is None else dt
    now = frame.timestamp if now is None else now
    n_events = 0 if memory is None else memory.event_count

    decision = None
    attempted = hit = False
    key = None
    if memory is not None:
        ctx = memory.snapshot().get(ComponentKind.P_ROUTING_CONTEXT)
        if ctx is not None:
            # keep the previous decision/state visible to concurrent readers
            memory.update(ComponentKind.P_ROUTING_CONTEXT,
                          {**ctx.payload, "frame": frame, "scene_id": scene_id},
                          Trigger.NEW_DIAGNOSTICS, now)
            memory.read(ComponentKind.P_ROUTING_CONTEXT, Trigger.ROUTING_DECISION, now)
        if recall:
            key = RecallKey.from_frame(frame, config.recall_quantization, scene_id)
            attempted = True
            cached = memory.recall(key, now, config.recall_ttl)
            if cached is not None:
                hit = True
                decision = cached.with_source(DecisionSource.MEMORY_RECALL)
    if decision is None:
        decision = backend.score(frame, None if memory is None else memory.snapshot())
        if key is not None:
            memory.remember(key, decision, now)

    state = combine(decision, prev, config, dt)

    if memory is not None:
        with memory.transaction(now) as tx:
            tx.expire(ExpiryEvent.ROUTING_DECISION_COMPLETED)
            tx.update(ComponentKind.P_ROUTING_CONTEXT,
                      {"frame": frame, "decision": decision, "state": state, "scene_id": scene_id},
                      Trigger.FIRST_DIAGNOSTICS)
        memory.read(ComponentKind.P_ROUTING_CONTEXT, Trigger.ROUTING_DECISION, now)
        events = tuple(memory.events_since(n_events))
    else:
        events = ()
    return StepResult(state, decision, events, attempted, hit)


def static_state(step: int = 0) -> RoutingState:
    """All modalities on with uniform weights, i.e. routing disabled."""
    n = len(MODALITIES)
    return RoutingState(
        step=step, usage_set=ALL_MODALITIES, reliable_set=ALL_MODALITIES,
        fused_set=ALL_MODALITIES, states=(1,) * n, weights=(1.0 / n,) * n,
        smoothed=(1.0 / n,) * n, active_set=ALL_MODALITIES,
    )
