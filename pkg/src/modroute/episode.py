"""Time-indexed episode records and their JSONL / CSV encodings."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .core import (
    MODALITIES,
    DiagnosticFrame,
    DrivingCommand,
    RouterDecision,
    RoutingState,
    set_to_bitmask,
)
from .memory import MemoryEvent


@dataclass(frozen=True)
class EpisodeRecord:
    """One reactive tick.

    ``state``/``decision`` are what the reactive loop acted on at this tick.
    ``memory_time`` is the commit time of the snapshot it read (None before
    the first commit). ``recall_attempted``/``recall_hit`` describe the
    routing step executed at this tick, if any.
    """

    tick: int
    timestamp: float
    frame: DiagnosticFrame
    state: RoutingState
    decision: RouterDecision | None = None
    scene_id: str = ""
    routed: bool = False
    memory_version: int = 0
    memory_time: float | None = None
    recall_attempted: bool = False
    recall_hit: bool = False
    memory_events: tuple[MemoryEvent, ...] = ()
    command: DrivingCommand | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "tick": self.tick,
            "timestamp": self.timestamp,
            "scene_id": self.scene_id,
            "routed": self.routed,
            "memory_version": self.memory_version,
            "memory_time": self.memory_time,
            "recall_attempted": self.recall_attempted,
            "recall_hit": self.recall_hit,
            "frame": self.frame.to_dict(),
            "decision": None if self.decision is None else self.decision.to_dict(),
            "state": self.state.to_dict(),
            "memory_events": [e.to_dict() for e in self.memory_events],
            "command": None if self.command is None else self.command.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "EpisodeRecord":
        return cls(
            tick=int(doc["tick"]),
            timestamp=float(doc["timestamp"]),
            frame=DiagnosticFrame.from_dict(doc["frame"]),
            state=RoutingState.from_dict(doc["state"]),
            decision=None if doc.get("decision") is None else RouterDecision.from_dict(doc["decision"]),
            scene_id=doc.get("scene_id", ""),
            routed=bool(doc.get("routed", False)),
            memory_version=int(doc.get("memory_version", 0)),
            memory_time=doc.get("memory_time"),
            recall_attempted=bool(doc.get("recall_attempted", False)),
            recall_hit=bool(doc.get("recall_hit", False)),
            memory_events=tuple(MemoryEvent.from_dict(e) for e in doc.get("memory_events", ())),
            command=None if doc.get("command") is None else DrivingCommand.from_dict(doc["command"]),
        )


@dataclass
class EpisodeLog:
    records: list[EpisodeRecord] = field(default_factory=list)
    memory_enabled: bool = True

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[EpisodeRecord]:
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def append(self, record: EpisodeRecord) -> None:
        if self.records and not record.timestamp > self.records[-1].timestamp:
            raise ValueError("episode record timestamps must be strictly increasing")
        self.records.append(record)

    @property
    def states(self) -> list[RoutingState]:
        return [r.state for r in self.records]

    @property
    def routed_states(self) -> list[RoutingState]:
        return [r.state for r in self.records if r.routed]

    @property
    def memory_events(self) -> list[MemoryEvent]:
        return [e for r in self.records for e in r.memory_events]

    def scenes(self) -> dict[str, list[EpisodeRecord]]:
        out: dict[str, list[EpisodeRecord]] = {}
        for r in self.records:
            out.setdefault(r.scene_id, []).append(r)
        return out

    # -- encodings ---------------------------------------------------------

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"episode": {"memory_enabled": self.memory_enabled,
                                             "records": len(self.records)}}) + "\n")
            for r in self.records:
                fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "EpisodeLog":
        log = cls()
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                doc = json.loads(line)
                if "episode" in doc:
                    log.memory_enabled = bool(doc["episode"].get("memory_enabled", True))
                    continue
                try:
                    log.append(EpisodeRecord.from_dict(doc))
                except (KeyError, ValueError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: bad episode record: {exc}") from exc
        return log

    def to_csv(self, path: str | Path) -> None:
        """Flattened view, one row per reactive tick."""
        names = [m.value for m in MODALITIES]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "tau", "active_mask", *[f"w_smooth_{n}" for n in names],
                        "recall_hit", "fallback", "degraded"])
            for r in self.records:
                w.writerow([
                    repr(r.timestamp),
                    "" if r.memory_time is None else repr(float(r.memory_time)),
                    set_to_bitmask(r.state.active_set),
                    *[repr(x) for x in r.state.smoothed],
                    int(r.recall_hit), int(r.state.fallback_used), int(r.state.degraded),
                ])


def frames_of(log: EpisodeLog | Sequence[EpisodeRecord]) -> list[DiagnosticFrame]:
    return [r.frame for r in log]


def iter_routed(records: Iterable[EpisodeRecord]) -> Iterator[EpisodeRecord]:
    return (r for r in records if r.routed)
