"""Synthetic stress scenarios and the weighted-fusion stub.

Traces drive diagnostic indicators, not reliabilities, so every scenario goes
through the full indicator -> score -> route pipeline. Each modality's three
indicators are set so that the rule-based reliability equals a target level:

* gradual / abrupt / baseline levels move all three indicators together;
* high-frequency noise perturbs one sensitive indicator per modality
  (camera brightness, lidar noise ratio, radar RCS stability) by
  ``amplitude * sin(2*pi*k/period + phase)``. Because reliability averages
  three indicators, the resulting reliability swing is ``amplitude / 3``.

Phases come from a counter-based Philox generator keyed by ``seed``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import (
    MODALITIES,
    N_MODALITIES,
    CameraIndicators,
    DiagnosticFrame,
    ExternalContext,
    FeatureVector,
    LidarIndicators,
    Modality,
    RadarIndicators,
)


class PerturbationKind(str, Enum):
    GRADUAL = "GradualDegradation"
    ABRUPT = "AbruptFailure"
    NOISE = "HighFrequencyNoise"


@dataclass(frozen=True)
class PerturbationSpec:
    kind: PerturbationKind
    targets: tuple[Modality, ...]
    duration: float
    dt: float = 0.5
    # gradual: linear ramp start_level -> end_level; abrupt: start_level until onset, then floor
    start_level: float = 0.9
    end_level: float = 0.1
    onset: float = 5.0
    floor: float = 0.05
    # noise
    carrier: float = 0.5
    amplitude: float = 0.15
    period: int = 2
    seed: int = 0
    # untouched modalities and scene context
    baseline: float = 0.8
    weather_severity: float = 0.85
    illumination: float = 1.0
    map_complexity: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PerturbationKind(self.kind))
        targets = self.targets
        if isinstance(targets, (str, Modality)):
            targets = (targets,)
        object.__setattr__(self, "targets", tuple(Modality(m) for m in targets))
        self.validate()

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration / self.dt))

    def validate(self) -> None:
        if self.duration <= 0 or self.dt <= 0:
            raise ValueError("duration and dt must be > 0")
        if self.n_ticks < 1:
            raise ValueError("scenario shorter than one tick")
        if not self.targets:
            raise ValueError("at least one target modality required")
        levels = {
            "start_level": self.start_level, "end_level": self.end_level, "floor": self.floor,
            "carrier": self.carrier, "baseline": self.baseline,
            "weather_severity": self.weather_severity, "illumination": self.illumination,
            "map_complexity": self.map_complexity,
            "carrier - amplitude": self.carrier - self.amplitude,
            "carrier + amplitude": self.carrier + self.amplitude,
        }
        for name, v in levels.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if int(self.period) != self.period or self.period < 2:
            raise ValueError("period must be an integer >= 2 ticks")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["kind"] = self.kind.value
        doc["targets"] = [m.value for m in self.targets]
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PerturbationSpec":
        return cls(**doc)

    @classmethod
    def load(cls, path: str | Path) -> "PerturbationSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def noise_phases(seed: int) -> np.ndarray:
    """One phase per modality from a Philox stream keyed by ``seed``."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    return rng.uniform(0.0, 2.0 * math.pi, size=N_MODALITIES)


def _noise_wave(spec: PerturbationSpec) -> np.ndarray:
    """(n_ticks, N) indicator-level perturbation, zero outside the targets."""
    n = spec.n_ticks
    wave = np.zeros((n, N_MODALITIES))
    if spec.kind is not PerturbationKind.NOISE:
        return wave
    k = np.arange(n)
    phases = noise_phases(spec.seed)
    for m in spec.targets:
        i = MODALITIES.index(m)
        wave[:, i] = spec.amplitude * np.sin(2.0 * math.pi * k / spec.period + phases[i])
    return wave


def _carrier_levels(spec: PerturbationSpec) -> np.ndarray:
    n = spec.n_ticks
    t = np.arange(n) * spec.dt
    if spec.kind is PerturbationKind.GRADUAL:
        if n == 1:
            curve = np.full(1, float(spec.start_level))
        else:
            curve = spec.start_level + (spec.end_level - spec.start_level) * np.arange(n) / (n - 1)
    elif spec.kind is PerturbationKind.ABRUPT:
        curve = np.where(t < spec.onset, spec.start_level, spec.floor)
    else:
        curve = np.full(n, float(spec.carrier))
    levels = np.full((n, N_MODALITIES), float(spec.baseline))
    for m in spec.targets:
        levels[:, MODALITIES.index(m)] = curve
    return levels


def _combined(specs: Sequence[PerturbationSpec]) -> tuple[np.ndarray, np.ndarray, PerturbationSpec]:
    base = specs[0]
    for s in specs[1:]:
        if s.n_ticks != base.n_ticks or s.dt != base.dt:
            raise ValueError("combined specs must share duration and dt")
    seen: set[Modality] = set()
    for s in specs:
        overlap = seen.intersection(s.targets)
        if overlap:
            raise ValueError(f"modalities targeted twice: {sorted(m.value for m in overlap)}")
        seen.update(s.targets)
    levels = _carrier_levels(base)
    wave = _noise_wave(base)
    for s in specs[1:]:
        lv, wv = _carrier_levels(s), _noise_wave(s)
        for m in s.targets:
            i = MODALITIES.index(m)
            levels[:, i] = lv[:, i]
            wave[:, i] = wv[:, i]
    return levels, wave, base


def level_curve(spec: PerturbationSpec, *more: PerturbationSpec) -> np.ndarray:
    """(n_ticks, N) rule-based reliability each modality is engineered to follow."""
    levels, wave, _ = _combined((spec, *more))
    return levels + wave / 3.0


def generate_trace(spec: PerturbationSpec, *more: PerturbationSpec,
                   t0: float = 0.0) -> list[DiagnosticFrame]:
    """Deterministic frame trace for one spec, or several specs on disjoint targets."""
    levels, wave, base = _combined((spec, *more))
    ext = ExternalContext(base.weather_severity, base.illumination)
    # camera reliability is scaled by illumination; divide it back out
    cam_scale = 1.0 / base.illumination if base.illumination > 0 else 0.0
    frames = []
    for k in range(base.n_ticks):
        (lc, ll, lr), (nc, nl, nr) = levels[k], wave[k]
        c = min(lc * cam_scale, 1.0)
        frames.append(DiagnosticFrame(
            timestamp=t0 + k * base.dt,
            camera=CameraIndicators(_unit(c + nc), c, c),
            lidar=LidarIndicators(ll, _unit(1.0 - (ll + nl)), ll),
            radar=RadarIndicators(lr, _unit(lr + nr), 1.0 - lr),
            external=ext,
            map_complexity=base.map_complexity,
        ))
    return frames


def _unit(x: float) -> float:
    return min(max(float(x), 0.0), 1.0)


CANONICAL_SEED = 42
CANONICAL_DURATION = 60.0
CANONICAL_DT = 0.5


def canonical_table3_specs() -> tuple[PerturbationSpec, PerturbationSpec]:
    common = dict(kind=PerturbationKind.NOISE, duration=CANONICAL_DURATION, dt=CANONICAL_DT,
                  carrier=0.5, seed=CANONICAL_SEED)
    camera = PerturbationSpec(targets=(Modality.CAMERA,), amplitude=0.08, period=11, **common)
    ranged = PerturbationSpec(targets=(Modality.LIDAR, Modality.RADAR), amplitude=0.15,
                              period=3, **common)
    return camera, ranged


def canonical_table3_trace() -> list[DiagnosticFrame]:
    """Frozen 60 s / 2 Hz fluctuation trace used for the threshold-vs-hysteresis comparison."""
    return generate_trace(*canonical_table3_specs())


def multi_scene_trace(seed: int = 0, scene_duration: float = 20.0,
                      dt: float = 0.5) -> tuple[list[DiagnosticFrame], list[str]]:
    """Three back-to-back scenes: lidar fading in rain, radar dropout, camera flicker."""
    scenes = [
        ("scene-0", PerturbationSpec(PerturbationKind.GRADUAL, (Modality.LIDAR,), scene_duration,
                                     dt, start_level=0.9, end_level=0.2, weather_severity=0.7,
                                     map_complexity=0.8)),
        ("scene-1", PerturbationSpec(PerturbationKind.ABRUPT, (Modality.RADAR,), scene_duration, dt,
                                     onset=scene_duration / 2, floor=0.05, weather_severity=0.3,
                                     map_complexity=0.9)),
        ("scene-2", PerturbationSpec(PerturbationKind.NOISE, (Modality.CAMERA,), scene_duration, dt,
                                     amplitude=0.12, period=3, seed=seed, weather_severity=0.1,
                                     map_complexity=0.2)),
    ]
    frames: list[DiagnosticFrame] = []
    ids: list[str] = []
    t0 = 0.0
    for sid, spec in scenes:
        part = generate_trace(spec, t0=t0)
        frames.extend(part)
        ids.extend([sid] * len(part))
        t0 += spec.n_ticks * dt
    return frames, ids


# --------------------------------------------------------------------------
# Weighted fusion


def fuse_features(features: Sequence[FeatureVector],
                  weights: Mapping[Modality, float] | Sequence[float]) -> FeatureVector:
    """Weighted sum of per-modality feature vectors.

    ``weights`` is either a mapping keyed by modality or a sequence aligned
    with ``features``; callers pass weights already renormalised over the
    active set (see ``RoutingState.fusion_weights``).
    """
    if not features:
        raise ValueError("no features to fuse")
    dims = {f.dim for f in features}
    if len(dims) != 1:
        raise ValueError(f"feature dimension mismatch: {sorted(dims)}")
    if isinstance(weights, Mapping):
        w = np.array([weights.get(f.modality, 0.0) for f in features], dtype=float)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(features),):
            raise ValueError("need one weight per feature vector")
    stacked = np.array([f.values for f in features], dtype=float)
    return FeatureVector(None, tuple(w @ stacked))


@dataclass(frozen=True)
class StubPerception:
    """Deterministic per-modality feature vectors standing in for deep perception."""

    dim: int = 4

    def features(self, frame: DiagnosticFrame) -> list[FeatureVector]:
        out = []
        items = dict(frame.indicator_items())
        for m in MODALITIES:
            vals = [v for k, v in items.items() if k.startswith(m.value + ".")]
            vec = (vals * (self.dim // len(vals) + 1))[: self.dim]
            out.append(FeatureVector(m, vec))
        return out
