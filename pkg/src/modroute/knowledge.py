"""Long-term knowledge repository: per-scene routing strategies distilled from episodes."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .core import MODALITIES, sorted_modalities
from .episode import EpisodeLog
from .metrics import stability_index

DEFAULT_QUALITY_THRESHOLD = 0.6


@dataclass(frozen=True)
class KnowledgeEntry:
    scene_id: str
    mean_complexity: float
    active_set: tuple[str, ...]
    final_weights: dict[str, float]
    rsi: float
    created_at: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "scene_id": self.scene_id,
            "mean_complexity": self.mean_complexity,
            "active_set": list(self.active_set),
            "final_weights": dict(self.final_weights),
            "rsi": self.rsi,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "KnowledgeEntry":
        return cls(doc["scene_id"], float(doc["mean_complexity"]), tuple(doc["active_set"]),
                   {k: float(v) for k, v in doc["final_weights"].items()}, float(doc["rsi"]),
                   float(doc["created_at"]))


def consolidate(episode: EpisodeLog, quality_threshold: float = DEFAULT_QUALITY_THRESHOLD,
                scene_ids: Iterable[str] | None = None) -> list[KnowledgeEntry]:
    """One entry per scene whose mean stability index reaches ``quality_threshold``.

    Restrict to ``scene_ids`` to distil only finished scenes.
    """
    entries = []
    wanted = None if scene_ids is None else set(scene_ids)
    for sid, recs in episode.scenes().items():
        if wanted is not None and sid not in wanted:
            continue
        rsi = stability_index(recs)
        if not rsi.value >= quality_threshold:
            continue
        complexities = [r.decision.scene_complexity for r in recs if r.decision is not None]
        dominant = Counter(
            tuple(m.value for m in sorted_modalities(r.state.active_set)) for r in recs
        ).most_common(1)[0][0]
        last = recs[-1]
        entries.append(KnowledgeEntry(
            scene_id=sid,
            mean_complexity=float(np.mean(complexities)) if complexities else 0.0,
            active_set=dominant,
            final_weights={m.value: w for m, w in zip(MODALITIES, last.state.smoothed)},
            rsi=rsi.value,
            created_at=last.timestamp,
        ))
    return entries


class KnowledgeRepository:
    """Entries kept in memory with a size cap (oldest evicted first).

    With a ``path`` every added entry is also appended to a JSONL file, which
    is never rewritten; ``load`` replays it subject to the cap.
    """

    def __init__(self, path: str | Path | None = None, cap: int = 1000):
        if cap < 0:
            raise ValueError("cap must be >= 0")
        self.path = None if path is None else Path(path)
        self.cap = cap
        self.entries: list[KnowledgeEntry] = []
        self.evicted = 0

    @classmethod
    def load(cls, path: str | Path, cap: int = 1000) -> "KnowledgeRepository":
        repo = cls(path, cap)
        p = Path(path)
        if p.exists():
            with open(p) as fh:
                for line in fh:
                    if line.strip():
                        repo._insert(KnowledgeEntry.from_dict(json.loads(line)))
        return repo

    def __len__(self) -> int:
        return len(self.entries)

    def _insert(self, entry: KnowledgeEntry) -> int:
        self.entries.append(entry)
        n = max(0, len(self.entries) - self.cap)
        if n:
            del self.entries[:n]
            self.evicted += n
        return n

    def add(self, entries: Iterable[KnowledgeEntry]) -> int:
        """Append entries; return how many old ones the cap evicted."""
        evicted = 0
        entries = list(entries)
        if self.path is not None and entries:
            with open(self.path, "a") as fh:
                for e in entries:
                    fh.write(json.dumps(e.to_dict(), sort_keys=True) + "\n")
        for e in entries:
            evicted += self._insert(e)
        return evicted

    def lookup(self, scene_id: str) -> KnowledgeEntry | None:
        for e in reversed(self.entries):
            if e.scene_id == scene_id:
                return e
        return None
