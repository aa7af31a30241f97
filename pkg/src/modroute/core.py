"""Shared domain types, configuration and trace/config file I/O.

Every type here is an immutable value. Per-modality quantities are stored
as tuples in canonical modality order (camera, lidar, radar) and exposed as
numpy arrays where arithmetic is needed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


class Modality(str, Enum):
    CAMERA = "camera"
    LIDAR = "lidar"
    RADAR = "radar"

    @property
    def index(self) -> int:
        """1-based ordinal position."""
        return MODALITIES.index(self) + 1

    @classmethod
    def from_index(cls, index: int) -> "Modality":
        if not 1 <= index <= len(MODALITIES):
            raise ValueError(f"modality index out of range: {index}")
        return MODALITIES[index - 1]


MODALITIES: tuple[Modality, ...] = (Modality.CAMERA, Modality.LIDAR, Modality.RADAR)
N_MODALITIES = len(MODALITIES)


def modality_set(items: Iterable[Modality | str]) -> frozenset[Modality]:
    return frozenset(Modality(m) for m in items)


def sorted_modalities(items: Iterable[Modality]) -> list[Modality]:
    return sorted(items, key=MODALITIES.index)


def set_to_mask(items: Iterable[Modality]) -> np.ndarray:
    s = set(items)
    return np.array([m in s for m in MODALITIES], dtype=bool)


def mask_to_set(mask: Sequence[bool] | np.ndarray) -> frozenset[Modality]:
    return frozenset(m for m, on in zip(MODALITIES, mask) if on)


def set_to_bitmask(items: Iterable[Modality]) -> int:
    """Bit i-1 set for modality with index i (camera=1, lidar=2, radar=4)."""
    return sum(1 << (m.index - 1) for m in set(items))


def _per_modality(values: Mapping[str, Any]) -> tuple:
    missing = [m.value for m in MODALITIES if m.value not in values]
    if missing:
        raise KeyError(f"missing modality entries: {missing}")
    return tuple(values[m.value] for m in MODALITIES)


def _as_mapping(values: Sequence) -> dict[str, Any]:
    return {m.value: v for m, v in zip(MODALITIES, values)}


# --------------------------------------------------------------------------
# Diagnostic frames


@dataclass(frozen=True)
class CameraIndicators:
    brightness_mean: float
    contrast: float
    edge_density: float


@dataclass(frozen=True)
class LidarIndicators:
    point_density: float
    noise_ratio: float
    reflectivity_ratio: float


@dataclass(frozen=True)
class RadarIndicators:
    target_density: float
    rcs_stability: float
    detection_probability: float


@dataclass(frozen=True)
class ExternalContext:
    weather_severity: float
    illumination: float


_GROUPS = {
    "camera": CameraIndicators,
    "lidar": LidarIndicators,
    "radar": RadarIndicators,
    "external": ExternalContext,
}


@dataclass(frozen=True)
class DiagnosticFrame:
    """One timestep of pre-normalised diagnostic and contextual indicators."""

    timestamp: float
    camera: CameraIndicators
    lidar: LidarIndicators
    radar: RadarIndicators
    external: ExternalContext
    map_complexity: float

    def indicator_items(self) -> list[tuple[str, float]]:
        """Flat ``(dotted_name, value)`` list of every enabled indicator."""
        items = []
        for group in ("camera", "lidar", "radar", "external"):
            obj = getattr(self, group)
            for f in fields(obj):
                items.append((f"{group}.{f.name}", float(getattr(obj, f.name))))
        items.append(("map_complexity", float(self.map_complexity)))
        return items

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"timestamp": self.timestamp}
        for group in _GROUPS:
            obj = getattr(self, group)
            doc[group] = {f.name: getattr(obj, f.name) for f in fields(obj)}
        doc["map_complexity"] = self.map_complexity
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "DiagnosticFrame":
        expected = {"timestamp", "map_complexity", *_GROUPS}
        extra = set(doc) - expected
        if extra:
            raise ValueError(f"unknown frame fields: {sorted(extra)}")
        kwargs: dict[str, Any] = {
            "timestamp": float(doc["timestamp"]),
            "map_complexity": float(doc["map_complexity"]),
        }
        for group, typ in _GROUPS.items():
            sub = doc[group]
            names = {f.name for f in fields(typ)}
            if set(sub) != names:
                raise ValueError(f"{group} fields must be exactly {sorted(names)}")
            kwargs[group] = typ(**{k: float(v) for k, v in sub.items()})
        return cls(**kwargs)

    @classmethod
    def uniform(cls, value: float, timestamp: float = 0.0) -> "DiagnosticFrame":
        """Frame with every indicator set to ``value``; handy in tests and demos."""
        return cls(
            timestamp=timestamp,
            camera=CameraIndicators(value, value, value),
            lidar=LidarIndicators(value, value, value),
            radar=RadarIndicators(value, value, value),
            external=ExternalContext(value, value),
            map_complexity=value,
        )


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    field: str | None = None
    message: str = ""

    def __bool__(self) -> bool:
        return self.ok


def validate_frame(frame: DiagnosticFrame) -> ValidationResult:
    t = frame.timestamp
    if not math.isfinite(t) or t < 0:
        return ValidationResult(False, "timestamp", f"timestamp must be finite and >= 0, got {t}")
    for name, value in frame.indicator_items():
        if not (0.0 <= value <= 1.0):
            return ValidationResult(False, name, f"{name}={value} outside [0, 1]")
    return ValidationResult(True)


def validate_trace(frames: Sequence[DiagnosticFrame]) -> ValidationResult:
    prev = None
    for i, frame in enumerate(frames):
        res = validate_frame(frame)
        if not res:
            return ValidationResult(False, f"[{i}].{res.field}", res.message)
        if prev is not None and not frame.timestamp > prev:
            return ValidationResult(
                False, f"[{i}].timestamp",
                f"timestamps must be strictly increasing ({prev} then {frame.timestamp})",
            )
        prev = frame.timestamp
    return ValidationResult(True)


# --------------------------------------------------------------------------
# Router decisions


class DecisionSource(str, Enum):
    RULE_BASED = "RuleBased"
    SCRIPTED = "Scripted"
    REMOTE = "Remote"
    MEMORY_RECALL = "MemoryRecall"


@dataclass(frozen=True)
class RouterDecision:
    usage: tuple[int, int, int]
    reliability: tuple[float, float, float]
    scene_complexity: float
    source: DecisionSource = DecisionSource.RULE_BASED

    def __post_init__(self):
        if any(u not in (0, 1) for u in self.usage):
            raise ValueError(f"usage bits must be 0/1, got {tuple(self.usage)}")
        usage = tuple(int(u) for u in self.usage)
        rel = tuple(float(r) for r in self.reliability)
        if len(usage) != N_MODALITIES or len(rel) != N_MODALITIES:
            raise ValueError("decision needs exactly one usage bit and reliability per modality")
        if any(not (0.0 <= r <= 1.0) for r in rel):
            raise ValueError(f"reliabilities must lie in [0, 1], got {rel}")
        if not (0.0 <= self.scene_complexity <= 1.0):
            raise ValueError(f"scene_complexity must lie in [0, 1], got {self.scene_complexity}")
        object.__setattr__(self, "usage", usage)
        object.__setattr__(self, "reliability", rel)
        object.__setattr__(self, "scene_complexity", float(self.scene_complexity))
        object.__setattr__(self, "source", DecisionSource(self.source))

    @property
    def r(self) -> np.ndarray:
        return np.asarray(self.reliability, dtype=float)

    @property
    def u(self) -> np.ndarray:
        return np.asarray(self.usage, dtype=int)

    def with_source(self, source: DecisionSource) -> "RouterDecision":
        return RouterDecision(self.usage, self.reliability, self.scene_complexity, source)

    def to_dict(self) -> dict[str, Any]:
        return {
            "reliability": _as_mapping(self.reliability),
            "scene_complexity": self.scene_complexity,
            "usage": _as_mapping(self.usage),
            "source": self.source.value,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "RouterDecision":
        return cls(
            usage=_per_modality(doc["usage"]),
            reliability=_per_modality(doc["reliability"]),
            scene_complexity=doc["scene_complexity"],
            source=DecisionSource(doc.get("source", DecisionSource.SCRIPTED.value)),
        )


# --------------------------------------------------------------------------
# Configuration

DEFAULT_THRESHOLD = 0.5
DEFAULT_DELTA = 0.05


@dataclass(frozen=True)
class RoutingConfig:
    """Routing thresholds, hysteresis margin, smoothing and loop periods.

    Defaults correspond to a 2 Hz reactive / 1 Hz deliberative schedule.
    """

    thresholds: tuple[float, float, float] = (DEFAULT_THRESHOLD,) * N_MODALITIES
    delta: float = DEFAULT_DELTA
    tau: float = 1.0
    dt_fast: float = 0.5
    dt_slow: float = 1.0
    recall_ttl: float = 5.0
    recall_quantization: float = 0.1

    def __post_init__(self):
        th = tuple(float(x) for x in self.thresholds)
        object.__setattr__(self, "thresholds", th)
        if len(th) != N_MODALITIES:
            raise ValueError("one threshold per modality required")
        if any(not 0.0 <= x <= 1.0 for x in th):
            raise ValueError(f"thresholds must lie in [0, 1], got {th}")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        for x in th:
            if x - self.delta < 0 or x + self.delta > 1:
                raise ValueError(
                    f"delta={self.delta} puts the hysteresis band of threshold {x} outside [0, 1]"
                )
        if self.delta >= min(th) and self.delta > 0:
            raise ValueError("delta must be smaller than every threshold")
        if self.tau <= 0 or self.dt_fast <= 0:
            raise ValueError("tau and dt_fast must be > 0")
        if self.dt_slow < self.dt_fast:
            raise ValueError("dt_slow must be >= dt_fast")
        k = self.dt_slow / self.dt_fast
        if abs(k - round(k)) > 1e-9:
            raise ValueError("dt_slow must be an integer multiple of dt_fast")
        if self.recall_ttl < 0:
            raise ValueError("recall_ttl must be >= 0")
        if not 0 < self.recall_quantization <= 1:
            raise ValueError("recall_quantization must lie in (0, 1]")

    @property
    def theta(self) -> np.ndarray:
        return np.asarray(self.thresholds, dtype=float)

    @property
    def loop_ratio(self) -> int:
        """Number of reactive ticks per deliberative tick."""
        return int(round(self.dt_slow / self.dt_fast))

    def to_dict(self) -> dict[str, Any]:
        return {
            "thresholds": _as_mapping(self.thresholds),
            "delta": self.delta,
            "tau": self.tau,
            "dt_fast": self.dt_fast,
            "dt_slow": self.dt_slow,
            "recall_ttl": self.recall_ttl,
            "recall_quantization": self.recall_quantization,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "RoutingConfig":
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown config fields: {sorted(extra)}")
        kwargs = dict(doc)
        th = kwargs.get("thresholds")
        if isinstance(th, Mapping):
            kwargs["thresholds"] = _per_modality(th)
        elif isinstance(th, (int, float)):
            kwargs["thresholds"] = (float(th),) * N_MODALITIES
        return cls(**kwargs)

    def replace(self, **changes) -> "RoutingConfig":
        doc = {f.name: getattr(self, f.name) for f in fields(self)}
        doc.update(changes)
        return RoutingConfig(**doc)


def load_config(path: str | Path) -> RoutingConfig:
    with open(path) as fh:
        return RoutingConfig.from_dict(json.load(fh))


def save_config(config: RoutingConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# Routing state


def _fset(items) -> frozenset[Modality]:
    return modality_set(items)


@dataclass(frozen=True)
class RoutingState:
    """Output of one routing step.

    ``usage_set``/``reliable_set``/``fused_set`` are U, R and F; ``active_set``
    is the gated set (F intersected with latched states). ``weights`` are the
    normalised raw weights, ``smoothed`` their EMA.
    """

    step: int
    usage_set: frozenset[Modality]
    reliable_set: frozenset[Modality]
    fused_set: frozenset[Modality]
    states: tuple[int, int, int]
    weights: tuple[float, float, float]
    smoothed: tuple[float, float, float]
    active_set: frozenset[Modality]
    fallback_used: bool = False
    degraded: bool = False

    def __post_init__(self):
        for name in ("usage_set", "reliable_set", "fused_set", "active_set"):
            object.__setattr__(self, name, _fset(getattr(self, name)))
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "smoothed", tuple(float(w) for w in self.smoothed))

    @property
    def s(self) -> np.ndarray:
        return np.asarray(self.states, dtype=int)

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def w_smooth(self) -> np.ndarray:
        return np.asarray(self.smoothed, dtype=float)

    def fusion_weights(self) -> np.ndarray:
        """Smoothed weights restricted to the active set and renormalised to sum 1."""
        mask = set_to_mask(self.active_set)
        w = np.where(mask, self.w_smooth, 0.0)
        total = w.sum()
        if total > 0:
            return w / total
        if mask.any():
            return mask / mask.sum()
        return w

    def to_dict(self) -> dict[str, Any]:
        def names(s):
            return [m.value for m in sorted_modalities(s)]

        return {
            "step": self.step,
            "usage_set": names(self.usage_set),
            "reliable_set": names(self.reliable_set),
            "fused_set": names(self.fused_set),
            "states": _as_mapping(self.states),
            "weights": _as_mapping(self.weights),
            "smoothed": _as_mapping(self.smoothed),
            "active_set": names(self.active_set),
            "fallback_used": self.fallback_used,
            "degraded": self.degraded,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "RoutingState":
        return cls(
            step=int(doc["step"]),
            usage_set=doc["usage_set"],
            reliable_set=doc["reliable_set"],
            fused_set=doc["fused_set"],
            states=_per_modality(doc["states"]),
            weights=_per_modality(doc["weights"]),
            smoothed=_per_modality(doc["smoothed"]),
            active_set=doc["active_set"],
            fallback_used=bool(doc["fallback_used"]),
            degraded=bool(doc["degraded"]),
        )


@dataclass(frozen=True)
class FeatureVector:
    modality: Modality | None
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def dim(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class DrivingCommand:
    """Opaque stand-in for the reactive loop's control output."""

    command_id: str
    active_set: frozenset[Modality]

    def to_dict(self) -> dict[str, Any]:
        return {"command_id": self.command_id,
                "active_set": [m.value for m in sorted_modalities(self.active_set)]}

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "DrivingCommand":
        return cls(doc["command_id"], modality_set(doc["active_set"]))


# --------------------------------------------------------------------------
# Trace files


def write_trace(frames: Iterable[DiagnosticFrame], path: str | Path) -> None:
    with open(path, "w") as fh:
        for frame in frames:
            fh.write(json.dumps(frame.to_dict(), sort_keys=True) + "\n")


def read_trace(path: str | Path, validate: bool = True) -> list[DiagnosticFrame]:
    frames = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                frames.append(DiagnosticFrame.from_dict(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad frame: {exc}") from exc
    if validate:
        res = validate_trace(frames)
        if not res:
            raise ValueError(f"{path}: invalid trace at {res.field}: {res.message}")
    return frames

