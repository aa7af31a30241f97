"""Fast reactive loop and slow deliberative loop sharing one memory store.

In simulated time (the default) both loops run on one thread in timestamp
order. The deliberative cycle scheduled at slow tick ``t_j`` commits at
``t_j + latency``; a commit due at or before a reactive tick is applied
first, so with zero latency and ``k = 1`` the dual loop reduces to routing
every tick. At most one deliberative cycle is in flight: slow ticks that
arrive while one is pending are skipped, and the reactive loop keeps acting
on the last committed routing state.

Each reactive tick reads the routing context from the latest snapshot and
records the state it acted on together with the snapshot's version and
commit time. Before the first commit it runs static fusion.
"""
from __future__ import annotations

import math
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Any, Sequence

from .core import DiagnosticFrame, DrivingCommand, RoutingConfig, RoutingState, sorted_modalities
from .engine import Backend, route_step, static_state
from .episode import EpisodeLog, EpisodeRecord
from .knowledge import DEFAULT_QUALITY_THRESHOLD, KnowledgeRepository, consolidate
from .memory import ComponentKind, ExpiryEvent, MemoryStore, Trigger
from .stress import StubPerception, fuse_features

_TOL = 1e-6


class ScheduleError(ValueError):
    """Trace timestamps do not fit the loop schedule."""


@dataclass(frozen=True)
class LoopSchedule:
    dt_fast: float = 0.5
    dt_slow: float = 1.0
    duration: float | None = None
    simulated: bool = True
    # simulated time from slow tick to commit of its deliberative cycle
    latency: float = 0.0

    def __post_init__(self):
        if self.dt_fast <= 0 or self.dt_slow <= 0:
            raise ValueError("loop periods must be > 0")
        k = self.dt_slow / self.dt_fast
        if k < 1 - _TOL or abs(k - round(k)) > 1e-9:
            raise ValueError("dt_slow must be an integer multiple (>= 1) of dt_fast")
        if self.duration is not None and self.duration < 0:
            raise ValueError("duration must be >= 0")
        if self.latency < 0:
            raise ValueError("latency must be >= 0")

    @property
    def k(self) -> int:
        return int(round(self.dt_slow / self.dt_fast))

    @classmethod
    def from_hz(cls, fast_hz: float, slow_hz: float, **kw) -> "LoopSchedule":
        if fast_hz <= 0 or slow_hz <= 0:
            raise ValueError("loop frequencies must be > 0")
        return cls(1.0 / fast_hz, 1.0 / slow_hz, **kw)

    @classmethod
    def from_config(cls, config: RoutingConfig, **kw) -> "LoopSchedule":
        return cls(config.dt_fast, config.dt_slow, **kw)

    def n_ticks(self, trace_len: int) -> int:
        if self.duration is None:
            return trace_len
        return int(math.floor(self.duration / self.dt_fast + _TOL))


class HistoryWindow:
    """The last ``k`` (frame, state) pairs seen by the reactive loop."""

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("window length must be >= 1")
        self._items: deque[tuple[DiagnosticFrame, RoutingState]] = deque(maxlen=k)

    def __len__(self) -> int:
        return len(self._items)

    @property
    def maxlen(self) -> int:
        return self._items.maxlen

    def push(self, frame: DiagnosticFrame, state: RoutingState) -> None:
        if self._items and not frame.timestamp > self._items[-1][0].timestamp:
            raise ValueError("history window entries must be time-ordered")
        self._items.append((frame, state))

    def items(self) -> list[tuple[DiagnosticFrame, RoutingState]]:
        return list(self._items)

    def copy(self) -> "HistoryWindow":
        out = HistoryWindow(self.maxlen)
        out._items.extend(self._items)
        return out

    def summary(self) -> dict[str, Any]:
        if not self._items:
            return {"length": 0}
        frames = [f for f, _ in self._items]
        return {
            "length": len(frames),
            "t_start": frames[0].timestamp,
            "t_end": frames[-1].timestamp,
            "active_sets": [[m.value for m in sorted_modalities(s.active_set)]
                            for _, s in self._items],
        }


def check_trace(trace: Sequence[DiagnosticFrame], dt_fast: float) -> None:
    for a, b in zip(trace, trace[1:]):
        if abs((b.timestamp - a.timestamp) - dt_fast) > _TOL:
            raise ScheduleError(
                f"frame spacing {b.timestamp - a.timestamp:g}s at t={a.timestamp:g} "
                f"does not match the reactive period {dt_fast:g}s")


def _scene_ids(trace: Sequence[DiagnosticFrame], scene_ids: Sequence[str] | None) -> list[str]:
    if scene_ids is None:
        return ["scene-0"] * len(trace)
    if len(scene_ids) < len(trace):
        raise ScheduleError("one scene id per frame required")
    return list(scene_ids[: len(trace)])


class Deliberation:
    """Everything the slow loop does in one cycle, and scene bookkeeping.

    The only writer of the memory store.
    """

    def __init__(self, backend: Backend, config: RoutingConfig, memory: MemoryStore, *,
                 dt: float, recall: bool = True, knowledge: KnowledgeRepository | None = None,
                 quality_threshold: float = DEFAULT_QUALITY_THRESHOLD,
                 perception: StubPerception | None = None):
        self.backend = backend
        self.config = config
        self.memory = memory
        self.dt = dt
        self.recall = recall
        self.knowledge = knowledge
        self.quality_threshold = quality_threshold
        self.perception = perception or StubPerception()
        self.prev: RoutingState | None = None
        self.scene: str | None = None
        self.cycles = 0
        self.scenes_closed: list[str] = []

    def cycle(self, frame: DiagnosticFrame, scene_id: str, history: HistoryWindow,
              commands: Sequence[DrivingCommand], now: float, log: EpisodeLog):
        mem = self.memory
        if self.scene is not None and scene_id != self.scene:
            self.end_scene(now, log)
        first_in_scene = self.scene != scene_id
        self.scene = scene_id

        prior = None
        if first_in_scene and self.knowledge is not None:
            if mem.read(ComponentKind.KNOWLEDGE_REPOSITORY, Trigger.EXPERIENCE_LOOKUP, now) is not None:
                hit = self.knowledge.lookup(scene_id)
                prior = None if hit is None else hit.to_dict()

        result = route_step(frame, self.prev, self.backend, mem, self.config, dt=self.dt,
                            now=now, scene_id=scene_id, recall=self.recall)
        self.prev = result.state
        self.cycles += 1

        # semantic abstraction stub: raw features in, fused features out
        feats = self.perception.features(frame)
        fused = fuse_features(feats, result.state.fusion_weights())
        mem.update(ComponentKind.P_SEMANTIC_CACHE,
                   {"features": [list(f.values) for f in feats]},
                   Trigger.FIRST_DEEP_PERCEPTION, now)
        mem.read(ComponentKind.P_SEMANTIC_CACHE, Trigger.REASONING_START, now)
        mem.read(ComponentKind.R_SEED_STATE, Trigger.REASONING_START, now)
        mem.update(ComponentKind.P_SEMANTIC_CACHE, {"fused": list(fused.values)},
                   Trigger.DEEP_PERCEPTION_RESULT, now)

        active = [m.value for m in sorted_modalities(result.state.active_set)]
        with mem.transaction(now) as tx:
            rec = tx.get(ComponentKind.R_SCENE_RECORD)
            cycles = 1 if rec is None else rec.payload["cycles"] + 1
            tx.update(ComponentKind.R_SCENE_RECORD,
                      {"scene_id": scene_id, "cycles": cycles, "history": history.summary(),
                       "complexity": result.decision.scene_complexity},
                      Trigger.FIRST_REASONING_CYCLE if rec is None else Trigger.REASONING_CYCLE)
            seed = tx.get(ComponentKind.R_SEED_STATE)
            if seed is None:
                tx.update(ComponentKind.R_SEED_STATE,
                          {"scene_id": scene_id, "active_set": active, "prior": prior},
                          Trigger.FIRST_REASONING_CYCLE)
            elif seed.payload["active_set"] != active:
                tx.update(ComponentKind.R_SEED_STATE, {**seed.payload, "active_set": active},
                          Trigger.CONTEXT_CHANGE)
            tx.expire(ExpiryEvent.REASONING_CYCLE_COMPLETED)
        mem.read(ComponentKind.R_SCENE_RECORD, Trigger.PLANNING_REQUEST, now)

        if commands:
            mem.read(ComponentKind.A_POLICY_LOG, Trigger.VALIDATION, now)
            policy = mem.snapshot().get(ComponentKind.A_POLICY_LOG)
            ids = [c.command_id for c in commands]
            if policy is None:
                mem.update(ComponentKind.A_POLICY_LOG, {"commands": ids},
                           Trigger.FIRST_CONTROL_COMMAND, now)
            else:
                mem.update(ComponentKind.A_POLICY_LOG,
                           {"commands": [*policy.payload["commands"], *ids]},
                           Trigger.CONTROL_CYCLE, now)
        return result

    def end_scene(self, now: float, log: EpisodeLog) -> None:
        if self.scene is None:
            return
        mem = self.memory
        mem.expire(now, ExpiryEvent.SCENE_END)
        self.scenes_closed.append(self.scene)
        if self.knowledge is not None:
            entries = consolidate(log, self.quality_threshold, scene_ids=[self.scene])
            if entries:
                evicted = self.knowledge.add(entries)
                with mem.transaction(now) as tx:
                    if evicted and tx.get(ComponentKind.KNOWLEDGE_REPOSITORY) is not None:
                        tx.expire_component(ComponentKind.KNOWLEDGE_REPOSITORY, Trigger.PRUNING)
                    live = tx.get(ComponentKind.KNOWLEDGE_REPOSITORY) is not None
                    tx.update(ComponentKind.KNOWLEDGE_REPOSITORY,
                              {"entries": len(self.knowledge),
                               "scenes": [e.scene_id for e in self.knowledge.entries]},
                              Trigger.CONSOLIDATION if live else Trigger.DISTILLATION)
        self.scene = None

    def close(self, now: float, log: EpisodeLog) -> None:
        """Episode end: the last routing round is over and the scene ends."""
        self.memory.expire(now, ExpiryEvent.ROUTING_DECISION_COMPLETED)
        self.end_scene(now, log)


def _react(memory: MemoryStore, tick: int, frame: DiagnosticFrame, now: float):
    """Reactive step: act on the latest committed routing context."""
    snap = memory.snapshot()
    payload = memory.read(ComponentKind.P_ROUTING_CONTEXT, Trigger.ROUTING_DECISION, now,
                          snapshot=snap)
    if payload is None or "state" not in payload:
        state, decision, tau = static_state(tick), None, None
    else:
        state, decision, tau = payload["state"], payload["decision"], snap.committed_at
    cmd = DrivingCommand(f"cmd-{tick}", state.active_set)
    return state, decision, snap.version if tau is not None else 0, tau, cmd


def run_episode(trace: Sequence[DiagnosticFrame], backend: Backend, config: RoutingConfig,
                schedule: LoopSchedule | None = None, *, scene_ids: Sequence[str] | None = None,
                memory: MemoryStore | None = None, recall: bool = True,
                knowledge: KnowledgeRepository | None = None,
                quality_threshold: float = DEFAULT_QUALITY_THRESHOLD) -> EpisodeLog:
    """Dual-loop episode over a trace sampled at the reactive period.

    Uses ``schedule`` periods when given, else the config's. EMA smoothing
    runs at the deliberative period. ``recall=False`` disables recall-cache
    lookups (the memory store is still written).
    """
    schedule = schedule or LoopSchedule.from_config(config)
    if not schedule.simulated:
        return run_episode_wallclock(trace, backend, config, schedule, scene_ids=scene_ids,
                                     memory=memory, recall=recall, knowledge=knowledge,
                                     quality_threshold=quality_threshold)
    n = schedule.n_ticks(len(trace))
    if n > len(trace):
        raise ScheduleError(f"schedule needs {n} frames, trace has {len(trace)}")
    trace = list(trace[:n])
    check_trace(trace, schedule.dt_fast)
    scenes = _scene_ids(trace, scene_ids)
    memory = memory or MemoryStore()
    delib = Deliberation(backend, config, memory, dt=schedule.dt_slow, recall=recall,
                         knowledge=knowledge, quality_threshold=quality_threshold)
    log = EpisodeLog(memory_enabled=recall)
    history = HistoryWindow(schedule.k)
    pending: tuple[float, int] | None = None  # (commit time, tick of the slow sample)
    commands: list[DrivingCommand] = []
    n_events = memory.event_count

    for i, frame in enumerate(trace):
        t = frame.timestamp
        if i % schedule.k == 0 and pending is None:
            pending = (t + schedule.latency, i)
        result = None
        if pending is not None and pending[0] <= t + _TOL:
            commit_t, j = pending
            pending = None
            result = delib.cycle(trace[j], scenes[j], history, commands, commit_t, log)
            commands = []
        state, decision, version, tau, cmd = _react(memory, i, frame, t)
        commands.append(cmd)
        history.push(frame, state)
        events = tuple(memory.events_since(n_events))
        n_events += len(events)
        log.append(EpisodeRecord(
            tick=i, timestamp=t, frame=frame, state=state, decision=decision,
            scene_id=scenes[i], routed=result is not None, memory_version=version,
            memory_time=tau,
            recall_attempted=bool(result and result.recall_attempted),
            recall_hit=bool(result and result.recall_hit),
            memory_events=events, command=cmd,
        ))
    if trace:
        delib.close(trace[-1].timestamp, log)
        _attach_tail_events(log, memory, n_events)
    return log


def _attach_tail_events(log: EpisodeLog, memory: MemoryStore, n_events: int) -> None:
    tail = tuple(memory.events_since(n_events))
    if tail and log.records:
        last = log.records[-1]
        log.records[-1] = EpisodeRecord(**{**last.__dict__,
                                           "memory_events": last.memory_events + tail})


def single_loop_episode(trace: Sequence[DiagnosticFrame], backend: Backend,
                        config: RoutingConfig, *, scene_ids: Sequence[str] | None = None,
                        memory: MemoryStore | None = None, recall: bool = True,
                        knowledge: KnowledgeRepository | None = None,
                        quality_threshold: float = DEFAULT_QUALITY_THRESHOLD) -> EpisodeLog:
    """Route synchronously at every reactive tick; EMA runs at the reactive period."""
    trace = list(trace)
    check_trace(trace, config.dt_fast)
    scenes = _scene_ids(trace, scene_ids)
    memory = memory or MemoryStore()
    delib = Deliberation(backend, config, memory, dt=config.dt_fast, recall=recall,
                         knowledge=knowledge, quality_threshold=quality_threshold)
    log = EpisodeLog(memory_enabled=recall)
    history = HistoryWindow(1)
    n_events = memory.event_count
    last_cmd: list[DrivingCommand] = []
    for i, frame in enumerate(trace):
        t = frame.timestamp
        result = delib.cycle(frame, scenes[i], history, last_cmd, t, log)
        cmd = DrivingCommand(f"cmd-{i}", result.state.active_set)
        last_cmd = [cmd]
        history.push(frame, result.state)
        events = tuple(memory.events_since(n_events))
        n_events += len(events)
        log.append(EpisodeRecord(
            tick=i, timestamp=t, frame=frame, state=result.state, decision=result.decision,
            scene_id=scenes[i], routed=True, memory_version=memory.version, memory_time=t,
            recall_attempted=result.recall_attempted, recall_hit=result.recall_hit,
            memory_events=events, command=cmd,
        ))
    if trace:
        delib.close(trace[-1].timestamp, log)
        _attach_tail_events(log, memory, n_events)
    return log


def static_fusion_episode(trace: Sequence[DiagnosticFrame],
                          scene_ids: Sequence[str] | None = None) -> EpisodeLog:
    """Routing disabled: every modality active with uniform weights, no memory."""
    scenes = _scene_ids(trace, scene_ids)
    log = EpisodeLog(memory_enabled=False)
    for i, frame in enumerate(trace):
        state = static_state(i)
        log.append(EpisodeRecord(tick=i, timestamp=frame.timestamp, frame=frame, state=state,
                                 scene_id=scenes[i],
                                 command=DrivingCommand(f"cmd-{i}", state.active_set)))
    return log


def run_episode_wallclock(trace: Sequence[DiagnosticFrame], backend: Backend,
                          config: RoutingConfig, schedule: LoopSchedule, *,
                          scene_ids: Sequence[str] | None = None,
                          memory: MemoryStore | None = None, recall: bool = True,
                          knowledge: KnowledgeRepository | None = None,
                          quality_threshold: float = DEFAULT_QUALITY_THRESHOLD,
                          time_scale: float = 1.0) -> EpisodeLog:
    """Two threads paced by the real clock; for demonstration, not reproducible.

    ``time_scale`` < 1 runs faster than real time. Commits are stamped with
    the trace time of their slow tick. Scheduling jitter can let a late
    reactive tick see a commit stamped after its own frame, so the staleness
    contract is only guaranteed in simulated time.
    """
    n = schedule.n_ticks(len(trace))
    trace = list(trace[:n])
    check_trace(trace, schedule.dt_fast)
    scenes = _scene_ids(trace, scene_ids)
    memory = memory or MemoryStore()
    log = EpisodeLog(memory_enabled=recall)
    if not trace:
        return log
    delib = Deliberation(backend, config, memory, dt=schedule.dt_slow, recall=recall,
                         knowledge=knowledge, quality_threshold=quality_threshold)
    t0 = trace[0].timestamp
    start = time.monotonic()
    lock = threading.Lock()
    history = HistoryWindow(schedule.k)
    commands: list[DrivingCommand] = []
    done = threading.Event()
    routed: dict[int, Any] = {}
    errors: list[BaseException] = []

    def trace_now() -> float:
        return t0 + (time.monotonic() - start) / time_scale

    def sleep_until(t: float) -> None:
        delay = (t - trace_now()) * time_scale
        if delay > 0:
            done.wait(delay)

    def slow() -> None:
        try:
            j = 0
            while j < n and not done.is_set():
                sleep_until(trace[j].timestamp)
                with lock:
                    cmds, commands[:] = list(commands), []
                    snap_log = EpisodeLog(list(log.records), recall)
                    hist = history.copy()
                result = delib.cycle(trace[j], scenes[j], hist, cmds, trace[j].timestamp, snap_log)
                routed[j] = result
                j += schedule.k
        except BaseException as exc:  # surfaced by the caller
            errors.append(exc)

    worker = threading.Thread(target=slow, name="deliberative", daemon=True)
    worker.start()
    try:
        for i, frame in enumerate(trace):
            sleep_until(frame.timestamp)
            if errors:
                break
            state, decision, version, tau, cmd = _react(memory, i, frame, frame.timestamp)
            result = routed.pop(i, None)
            with lock:
                commands.append(cmd)
                history.push(frame, state)
                log.append(EpisodeRecord(
                    tick=i, timestamp=frame.timestamp, frame=frame, state=state,
                    decision=decision, scene_id=scenes[i], routed=result is not None,
                    memory_version=version, memory_time=tau,
                    recall_attempted=bool(result and result.recall_attempted),
                    recall_hit=bool(result and result.recall_hit), command=cmd,
                ))
    finally:
        done.set()
        worker.join()
    if errors:
        raise errors[0]
    delib.close(trace[-1].timestamp, log)
    return log
