"""Hierarchical memory store with an event-driven component lifecycle.

Six components live in one store. Each goes through
``Generation -> (Reading | Updating)* -> Expiration``; which triggers may
cause each transition is fixed per component in ``LIFECYCLE``.

Concurrency: one writer (the deliberative loop) and many readers. Writers
are serialised by a lock and publish an immutable committed view by
reference swap, so ``snapshot()`` never blocks and never sees a partial
commit. A separate, short lock orders the event log.
"""
from __future__ import annotations

import csv
import math
import re
import threading
from contextlib import contextmanager
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .core import DiagnosticFrame, RouterDecision


class ComponentKind(str, Enum):
    P_ROUTING_CONTEXT = "PRoutingContext"
    P_SEMANTIC_CACHE = "PSemanticCache"
    R_SCENE_RECORD = "RSceneRecord"
    R_SEED_STATE = "RSeedState"
    A_POLICY_LOG = "APolicyLog"
    KNOWLEDGE_REPOSITORY = "KnowledgeRepository"


SHORT_TERM = (ComponentKind.P_ROUTING_CONTEXT, ComponentKind.P_SEMANTIC_CACHE)
MID_TERM = (ComponentKind.R_SCENE_RECORD, ComponentKind.R_SEED_STATE, ComponentKind.A_POLICY_LOG)


class Phase(str, Enum):
    GENERATED = "Generated"
    LIVE = "Live"
    EXPIRED = "Expired"


class Transition(str, Enum):
    GENERATION = "Generation"
    READING = "Reading"
    UPDATING = "Updating"
    EXPIRATION = "Expiration"


class Trigger(str, Enum):
    # routing context
    FIRST_DIAGNOSTICS = "first_diagnostics"
    ROUTING_DECISION = "routing_decision"
    NEW_DIAGNOSTICS = "new_diagnostics"
    NEXT_ROUTING_ROUND = "next_routing_round"
    # semantic cache
    FIRST_DEEP_PERCEPTION = "first_deep_perception"
    REASONING_START = "reasoning_start"
    DEEP_PERCEPTION_RESULT = "deep_perception_result"
    REASONING_DONE = "reasoning_done"
    # scene record / seed state
    FIRST_REASONING_CYCLE = "first_reasoning_cycle"
    PLANNING_REQUEST = "planning_request"
    REASONING_CYCLE = "reasoning_cycle"
    CONTEXT_CHANGE = "context_change"
    PERIODIC_REFRESH = "periodic_refresh"
    SCENE_END = "scene_end"
    ROUTE_RESET = "route_reset"
    # policy log
    FIRST_CONTROL_COMMAND = "first_control_command"
    VALIDATION = "validation"
    CONTROL_CYCLE = "control_cycle"
    # knowledge repository
    DISTILLATION = "distillation"
    EXPERIENCE_LOOKUP = "experience_lookup"
    CONSOLIDATION = "consolidation"
    PRUNING = "pruning"


T = Transition
K = ComponentKind
LIFECYCLE: dict[ComponentKind, dict[Transition, frozenset[Trigger]]] = {
    K.P_ROUTING_CONTEXT: {
        T.GENERATION: frozenset({Trigger.FIRST_DIAGNOSTICS}),
        T.READING: frozenset({Trigger.ROUTING_DECISION}),
        T.UPDATING: frozenset({Trigger.NEW_DIAGNOSTICS}),
        T.EXPIRATION: frozenset({Trigger.NEXT_ROUTING_ROUND}),
    },
    K.P_SEMANTIC_CACHE: {
        T.GENERATION: frozenset({Trigger.FIRST_DEEP_PERCEPTION}),
        T.READING: frozenset({Trigger.REASONING_START}),
        T.UPDATING: frozenset({Trigger.DEEP_PERCEPTION_RESULT}),
        T.EXPIRATION: frozenset({Trigger.REASONING_DONE}),
    },
    K.R_SCENE_RECORD: {
        T.GENERATION: frozenset({Trigger.FIRST_REASONING_CYCLE}),
        T.READING: frozenset({Trigger.PLANNING_REQUEST}),
        T.UPDATING: frozenset({Trigger.REASONING_CYCLE}),
        T.EXPIRATION: frozenset({Trigger.SCENE_END}),
    },
    K.R_SEED_STATE: {
        T.GENERATION: frozenset({Trigger.FIRST_REASONING_CYCLE}),
        T.READING: frozenset({Trigger.REASONING_START}),
        T.UPDATING: frozenset({Trigger.CONTEXT_CHANGE, Trigger.PERIODIC_REFRESH}),
        T.EXPIRATION: frozenset({Trigger.SCENE_END, Trigger.ROUTE_RESET}),
    },
    K.A_POLICY_LOG: {
        T.GENERATION: frozenset({Trigger.FIRST_CONTROL_COMMAND}),
        T.READING: frozenset({Trigger.VALIDATION}),
        T.UPDATING: frozenset({Trigger.CONTROL_CYCLE}),
        T.EXPIRATION: frozenset({Trigger.SCENE_END}),
    },
    K.KNOWLEDGE_REPOSITORY: {
        T.GENERATION: frozenset({Trigger.DISTILLATION}),
        T.READING: frozenset({Trigger.EXPERIENCE_LOOKUP}),
        T.UPDATING: frozenset({Trigger.CONSOLIDATION}),
        T.EXPIRATION: frozenset({Trigger.PRUNING}),
    },
}
del T, K


class ExpiryEvent(str, Enum):
    ROUTING_DECISION_COMPLETED = "RoutingDecisionCompleted"
    REASONING_CYCLE_COMPLETED = "ReasoningCycleCompleted"
    SCENE_END = "SceneEnd"
    ROUTE_RESET = "RouteReset"


_EXPIRES: dict[ExpiryEvent, tuple[tuple[ComponentKind, Trigger], ...]] = {
    ExpiryEvent.ROUTING_DECISION_COMPLETED: (
        (ComponentKind.P_ROUTING_CONTEXT, Trigger.NEXT_ROUTING_ROUND),),
    ExpiryEvent.REASONING_CYCLE_COMPLETED: (
        (ComponentKind.P_SEMANTIC_CACHE, Trigger.REASONING_DONE),),
    ExpiryEvent.SCENE_END: (
        (ComponentKind.R_SCENE_RECORD, Trigger.SCENE_END),
        (ComponentKind.R_SEED_STATE, Trigger.SCENE_END),
        (ComponentKind.A_POLICY_LOG, Trigger.SCENE_END),
    ),
    ExpiryEvent.ROUTE_RESET: ((ComponentKind.R_SEED_STATE, Trigger.ROUTE_RESET),),
}


class IllegalTriggerError(ValueError):
    pass


@dataclass(frozen=True)
class MemoryComponent:
    kind: ComponentKind
    payload: Mapping[str, Any]
    version: int
    created_at: float
    updated_at: float
    phase: Phase = Phase.GENERATED


@dataclass(frozen=True)
class MemoryEvent:
    timestamp: float
    component: ComponentKind
    transition: Transition
    trigger: Trigger

    def to_dict(self) -> dict[str, Any]:
        return {"timestamp": self.timestamp, "component": self.component.value,
                "phase": self.transition.value, "trigger": self.trigger.value}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "MemoryEvent":
        return cls(float(doc["timestamp"]), ComponentKind(doc["component"]),
                   Transition(doc["phase"]), Trigger(doc["trigger"]))


@dataclass(frozen=True)
class MemorySnapshot:
    """Immutable view of all live components at one committed version."""

    version: int
    committed_at: float | None
    components: Mapping[ComponentKind, MemoryComponent]

    def get(self, kind: ComponentKind) -> MemoryComponent | None:
        return self.components.get(kind)

    def __contains__(self, kind) -> bool:
        return kind in self.components

    def __len__(self) -> int:
        return len(self.components)

    def summary(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "components": {k.value: c.version for k, c in sorted(self.components.items())},
        }


_EMPTY = MemorySnapshot(0, None, MappingProxyType({}))


@dataclass(frozen=True)
class RecallKey:
    """Quantised indicator vector plus scene id; equal keys mean reusable decisions."""

    buckets: tuple[int, ...]
    scene_id: str = ""

    @classmethod
    def from_frame(cls, frame: DiagnosticFrame, quantization: float = 0.1,
                   scene_id: str = "") -> "RecallKey":
        # small epsilon keeps exact bucket edges (e.g. 0.3/0.1) from rounding down
        return cls(
            tuple(int(math.floor(v / quantization + 1e-9)) for _, v in frame.indicator_items()),
            scene_id,
        )


@dataclass(frozen=True)
class RecallAttempt:
    timestamp: float
    hit: bool


class Transaction:
    """Staged writes of a single commit. Obtain through ``MemoryStore.transaction``."""

    def __init__(self, store: "MemoryStore", now: float):
        self._store = store
        self.now = now
        self.version = store._committed.version + 1
        self.components = dict(store._committed.components)
        self.events: list[MemoryEvent] = []

    def update(self, kind: ComponentKind, payload: Mapping[str, Any],
               trigger: Trigger) -> MemoryEvent:
        kind, trigger = ComponentKind(kind), Trigger(trigger)
        rules = LIFECYCLE[kind]
        current = self.components.get(kind)
        if current is None:
            if trigger not in rules[Transition.GENERATION] | rules[Transition.UPDATING]:
                raise IllegalTriggerError(f"{trigger.value} cannot generate {kind.value}")
            # the event always carries the generation trigger of the component
            gen = trigger if trigger in rules[Transition.GENERATION] else min(rules[Transition.GENERATION])
            comp = MemoryComponent(kind, MappingProxyType(dict(payload)), self.version,
                                   self.now, self.now, Phase.GENERATED)
            event = MemoryEvent(self.now, kind, Transition.GENERATION, gen)
        else:
            if trigger not in rules[Transition.UPDATING]:
                raise IllegalTriggerError(f"{trigger.value} is not an update trigger for {kind.value}")
            comp = replace(current, payload=MappingProxyType(dict(payload)), version=self.version,
                           updated_at=self.now, phase=Phase.LIVE)
            event = MemoryEvent(self.now, kind, Transition.UPDATING, trigger)
        self.components[kind] = comp
        self.events.append(event)
        return event

    def expire(self, event: ExpiryEvent) -> list[MemoryEvent]:
        out = []
        for kind, trigger in _EXPIRES[ExpiryEvent(event)]:
            if kind in self.components:
                del self.components[kind]
                out.append(MemoryEvent(self.now, kind, Transition.EXPIRATION, trigger))
        self.events.extend(out)
        return out

    def expire_component(self, kind: ComponentKind, trigger: Trigger) -> MemoryEvent | None:
        kind, trigger = ComponentKind(kind), Trigger(trigger)
        if trigger not in LIFECYCLE[kind][Transition.EXPIRATION]:
            raise IllegalTriggerError(f"{trigger.value} cannot expire {kind.value}")
        if kind not in self.components:
            return None
        del self.components[kind]
        ev = MemoryEvent(self.now, kind, Transition.EXPIRATION, trigger)
        self.events.append(ev)
        return ev

    def get(self, kind: ComponentKind) -> MemoryComponent | None:
        return self.components.get(kind)


class MemoryStore:
    def __init__(self):
        self._write_lock = threading.Lock()
        self._log_lock = threading.Lock()
        self._committed: MemorySnapshot = _EMPTY
        self._events: list[MemoryEvent] = []
        self._recall: dict[RecallKey, tuple[RouterDecision, float]] = {}
        self._attempts: list[RecallAttempt] = []

    # -- reading -----------------------------------------------------------

    def snapshot(self) -> MemorySnapshot:
        return self._committed

    @property
    def version(self) -> int:
        return self._committed.version

    def read(self, kind: ComponentKind, trigger: Trigger, now: float,
             snapshot: MemorySnapshot | None = None) -> Mapping[str, Any] | None:
        """Explicit consumer read: returns the payload and logs a Reading event.

        Pass a ``snapshot`` obtained earlier to read from that exact version.
        """
        kind, trigger = ComponentKind(kind), Trigger(trigger)
        if trigger not in LIFECYCLE[kind][Transition.READING]:
            raise IllegalTriggerError(f"{trigger.value} is not a read trigger for {kind.value}")
        with self._log_lock:
            snap = self._committed if snapshot is None else snapshot
            comp = snap.components.get(kind)
            if comp is None:
                return None
            self._events.append(MemoryEvent(now, kind, Transition.READING, trigger))
        return comp.payload

    @property
    def events(self) -> list[MemoryEvent]:
        with self._log_lock:
            return list(self._events)

    @property
    def event_count(self) -> int:
        return len(self._events)

    def events_since(self, n: int) -> list[MemoryEvent]:
        with self._log_lock:
            return self._events[n:]

    # -- writing -----------------------------------------------------------

    @contextmanager
    def transaction(self, now: float) -> Iterator[Transaction]:
        """Group writes into one commit; nothing is published if the block raises."""
        with self._write_lock:
            tx = Transaction(self, now)
            yield tx
            if not tx.events:
                return
            comps = {}
            for kind, comp in tx.components.items():
                comps[kind] = comp
            snap = MemorySnapshot(tx.version, now, MappingProxyType(comps))
            with self._log_lock:
                self._committed = snap
                self._events.extend(tx.events)

    def update(self, kind: ComponentKind, payload: Mapping[str, Any], trigger: Trigger,
               now: float) -> MemoryEvent:
        with self.transaction(now) as tx:
            return tx.update(kind, payload, trigger)

    def expire(self, now: float, event: ExpiryEvent) -> list[MemoryEvent]:
        with self.transaction(now) as tx:
            return tx.expire(event)

    # -- recall cache ------------------------------------------------------

    def recall(self, key: RecallKey, now: float, ttl: float) -> RouterDecision | None:
        entry = self._recall.get(key)
        hit = entry is not None and 0.0 <= now - entry[1] <= ttl
        self._attempts.append(RecallAttempt(now, hit))
        return entry[0] if hit else None

    def remember(self, key: RecallKey, decision: RouterDecision, now: float) -> None:
        self._recall[key] = (decision, now)

    def clear_recall(self) -> None:
        self._recall.clear()

    @property
    def recall_attempts(self) -> list[RecallAttempt]:
        return list(self._attempts)


# --------------------------------------------------------------------------
# Lifecycle checks and event-log export

_CODES = {Transition.GENERATION: "G", Transition.READING: "R",
          Transition.UPDATING: "U", Transition.EXPIRATION: "E"}
_LIFECYCLE_RE = re.compile(r"(?:G[RU]*E)*(?:G[RU]*)?")
_CLOSED_RE = re.compile(r"(?:G[RU]*E)+")


def events_by_component(events: Iterable[MemoryEvent]) -> dict[ComponentKind, list[MemoryEvent]]:
    out: dict[ComponentKind, list[MemoryEvent]] = {}
    for ev in events:
        out.setdefault(ev.component, []).append(ev)
    return out


def lifecycle_string(events: Sequence[MemoryEvent]) -> str:
    return "".join(_CODES[e.transition] for e in events)


def lifecycle_is_legal(events: Sequence[MemoryEvent], closed: bool = False) -> bool:
    """True when the per-component event sequence follows the lifecycle grammar.

    With ``closed`` every generation must be matched by an expiration and
    each transition must use a trigger allowed for its component.
    """
    if not events:
        return not closed
    kinds = {e.component for e in events}
    if len(kinds) != 1:
        raise ValueError("events of more than one component")
    kind = kinds.pop()
    for ev in events:
        if ev.trigger not in LIFECYCLE[kind][ev.transition]:
            return False
    pattern = _CLOSED_RE if closed else _LIFECYCLE_RE
    return pattern.fullmatch(lifecycle_string(events)) is not None


def write_events_csv(events: Iterable[MemoryEvent], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "component", "phase", "trigger"])
        for ev in events:
            w.writerow([repr(float(ev.timestamp)), ev.component.value, ev.transition.value,
                        ev.trigger.value])


def read_events_csv(path: str | Path) -> list[MemoryEvent]:
    with open(path, newline="") as fh:
        return [MemoryEvent.from_dict(row) for row in csv.DictReader(fh)]
