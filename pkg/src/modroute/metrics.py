"""Routing and trajectory metrics computed from an EpisodeLog, plus report output.

Masks for efficiency and consistency are the gated active sets. The
stability index is computed per tick over the smoothed weights of the
active modalities with a population standard deviation, then averaged.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .core import MODALITIES, N_MODALITIES, RoutingConfig, RoutingState, set_to_mask
from .engine import HysteresisBand, hysteresis_step, initial_states
from .episode import EpisodeLog, EpisodeRecord


def _records(log: EpisodeLog | Sequence[EpisodeRecord]) -> list[EpisodeRecord]:
    return list(log.records if isinstance(log, EpisodeLog) else log)


def jaccard(a: Iterable, b: Iterable) -> float:
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def routing_efficiency(log) -> float:
    recs = _records(log)
    if not recs:
        raise ValueError("routing efficiency needs a non-empty log")
    off = [(N_MODALITIES - len(r.state.active_set)) / N_MODALITIES for r in recs]
    return float(np.mean(off))


def routing_consistency(log) -> float:
    recs = _records(log)
    if len(recs) < 2:
        raise ValueError("routing consistency needs at least two ticks")
    sims = [jaccard(p.state.active_set, q.state.active_set) for p, q in zip(recs, recs[1:])]
    return float(np.mean(sims))


def stability_tick(weights: Sequence[float]) -> float | None:
    """1 - popstd/mean of one tick's active weights; None when the mean is zero."""
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        return None
    if w.size == 1:
        return 1.0
    mean = w.mean()
    if mean == 0:
        return None
    if w.max() == w.min():
        return 1.0
    return float(1.0 - w.std() / mean)


def active_smoothed(state: RoutingState) -> np.ndarray:
    return state.w_smooth[set_to_mask(state.active_set)]


@dataclass(frozen=True)
class StabilityResult:
    value: float
    skipped_ticks: int


def stability_index(log) -> StabilityResult:
    recs = _records(log)
    if not recs:
        raise ValueError("stability index needs a non-empty log")
    vals, skipped = [], 0
    for r in recs:
        v = stability_tick(active_smoothed(r.state))
        if v is None:
            skipped += 1
        else:
            vals.append(v)
    return StabilityResult(float(np.mean(vals)) if vals else float("nan"), skipped)


@dataclass(frozen=True)
class RecallRate:
    cumulative: float
    rolling: tuple[tuple[float, float], ...]
    attempts: int
    hits: int

    @property
    def zero_attempts(self) -> bool:
        return self.attempts == 0


def memory_recall_rate(log, window: float = 5.0) -> RecallRate:
    """Cumulative hits/attempts plus the trailing-window rate at every attempt."""
    attempts = [(r.timestamp, r.recall_hit) for r in _records(log) if r.recall_attempted]
    if not attempts:
        return RecallRate(0.0, (), 0, 0)
    times = np.array([t for t, _ in attempts])
    hits = np.array([h for _, h in attempts], dtype=float)
    rolling = []
    for j, t in enumerate(times):
        sel = (times > t - window) & (times <= t)
        rolling.append((float(t), float(hits[sel].mean())))
    return RecallRate(float(hits.mean()), tuple(rolling), len(attempts), int(hits.sum()))


def count_switches(series) -> np.ndarray:
    """Per-column count of t >= 1 with s[t] != s[t-1]; a 1-D series gives a 1-element array."""
    s = np.asarray(series)
    if s.ndim == 1:
        s = s[:, None]
    if len(s) == 0:
        raise ValueError("empty state series")
    return (s[1:] != s[:-1]).sum(axis=0).astype(int)


def threshold_states(reliabilities, thresholds) -> np.ndarray:
    r = np.asarray(reliabilities, dtype=float)
    return (r >= np.asarray(thresholds, dtype=float)).astype(int)


def hysteresis_states(reliabilities, thresholds, delta: float) -> np.ndarray:
    r = np.asarray(reliabilities, dtype=float)
    theta = np.broadcast_to(np.asarray(thresholds, dtype=float), r.shape[1:])
    band = HysteresisBand.from_thresholds(theta, delta)
    out = np.empty(r.shape, dtype=int)
    out[0] = initial_states(r[0], theta)
    for t in range(1, len(r)):
        out[t] = hysteresis_step(out[t - 1], r[t], band)
    return out


@dataclass(frozen=True)
class SwitchReport:
    threshold: dict[str, int]
    hysteresis: dict[str, int]
    threshold_total: int
    hysteresis_total: int
    reduction_percent: float | None

    @classmethod
    def from_series(cls, thr_states, hyst_states) -> "SwitchReport":
        thr, hyst = count_switches(thr_states), count_switches(hyst_states)
        tt, ht = int(thr.sum()), int(hyst.sum())
        red = 100.0 * (1.0 - ht / tt) if tt > 0 else None
        names = [m.value for m in MODALITIES]
        return cls(dict(zip(names, map(int, thr))), dict(zip(names, map(int, hyst))), tt, ht, red)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "SwitchReport":
        return cls(dict(doc["threshold"]), dict(doc["hysteresis"]), int(doc["threshold_total"]),
                   int(doc["hysteresis_total"]), doc["reduction_percent"])


def compare_switching(reliabilities, config: RoutingConfig) -> SwitchReport:
    """Switch counts of plain thresholding vs hysteresis over one reliability stream."""
    thr = threshold_states(reliabilities, config.theta)
    hyst = hysteresis_states(reliabilities, config.theta, config.delta)
    return SwitchReport.from_series(thr, hyst)


def displacement_errors(pred, gt) -> tuple[float, float]:
    p, g = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    if p.shape != g.shape:
        raise ValueError(f"trajectory shapes differ: {p.shape} vs {g.shape}")
    if p.ndim != 2 or len(p) == 0:
        raise ValueError("trajectories must be non-empty (T, 2) point sequences")
    d = np.linalg.norm(p - g, axis=1)
    return float(d.mean()), float(d[-1])


# --------------------------------------------------------------------------
# Report


@dataclass
class MetricsReport:
    re: float
    rc: float
    rsi: float
    mrr_cumulative: float
    mrr_rolling: list[tuple[float, float]] = field(default_factory=list)
    recall_attempts: int = 0
    rsi_skipped_ticks: int = 0
    switches: SwitchReport | None = None
    ade: float | None = None
    fde: float | None = None
    ticks: int = 0

    def to_dict(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["mrr_rolling"] = [list(p) for p in self.mrr_rolling]
        doc["zero_recall_attempts"] = self.recall_attempts == 0
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "MetricsReport":
        doc = dict(doc)
        doc.pop("zero_recall_attempts", None)
        sw = doc.pop("switches", None)
        doc["mrr_rolling"] = [tuple(p) for p in doc.get("mrr_rolling", [])]
        return cls(switches=None if sw is None else SwitchReport.from_dict(sw), **doc)


def compute_report(log: EpisodeLog, window: float = 5.0, switches: SwitchReport | None = None,
                   trajectories: tuple | None = None) -> MetricsReport:
    recs = _records(log)
    rsi = stability_index(recs)
    mrr = memory_recall_rate(recs, window)
    ade = fde = None
    if trajectories is not None:
        ade, fde = displacement_errors(*trajectories)
    return MetricsReport(
        re=routing_efficiency(recs),
        rc=routing_consistency(recs) if len(recs) >= 2 else 1.0,
        rsi=rsi.value,
        mrr_cumulative=mrr.cumulative,
        mrr_rolling=list(mrr.rolling),
        recall_attempts=mrr.attempts,
        rsi_skipped_ticks=rsi.skipped_ticks,
        switches=switches,
        ade=ade,
        fde=fde,
        ticks=len(recs),
    )


def _num(x: float) -> str:
    return repr(float(x))


def write_weights_csv(log, path: str | Path) -> None:
    names = [m.value for m in MODALITIES]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *[f"w_{n}" for n in names], *[f"w_smooth_{n}" for n in names]])
        for r in _records(log):
            w.writerow([_num(r.timestamp), *map(_num, r.state.weights), *map(_num, r.state.smoothed)])


def write_states_csv(times: Sequence[float], states, path: str | Path) -> None:
    names = [m.value for m in MODALITIES]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *[f"s_{n}" for n in names]])
        for t, row in zip(times, np.asarray(states, dtype=int)):
            w.writerow([_num(t), *map(int, row)])


def write_mrr_csv(rate: RecallRate | MetricsReport, path: str | Path) -> None:
    rolling = rate.rolling if isinstance(rate, RecallRate) else rate.mrr_rolling
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mrr_rolling"])
        for t, v in rolling:
            w.writerow([_num(t), _num(v)])


def emit_report(report: MetricsReport, out_dir: str | Path, fmt: str = "json",
                log: EpisodeLog | None = None) -> list[Path]:
    """Write the report document and, given the log, the plot-ready CSV series."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "json":
        p = out / "report.json"
        p.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    elif fmt == "csv":
        p = out / "report.csv"
        flat = {k: v for k, v in report.to_dict().items() if not isinstance(v, (list, dict))}
        if report.switches is not None:
            flat["switches_threshold_total"] = report.switches.threshold_total
            flat["switches_hysteresis_total"] = report.switches.hysteresis_total
            flat["switches_reduction_percent"] = report.switches.reduction_percent
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            for k in sorted(flat):
                w.writerow([k, "" if flat[k] is None else flat[k]])
    else:
        raise ValueError(f"unknown report format: {fmt}")
    written.append(p)
    if log is not None:
        recs = _records(log)
        write_weights_csv(recs, out / "weights.csv")
        write_states_csv([r.timestamp for r in recs], [r.state.states for r in recs],
                         out / "states.csv")
        write_mrr_csv(report, out / "mrr.csv")
        written += [out / "weights.csv", out / "states.csv", out / "mrr.csv"]
    return written


def load_report(path: str | Path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text()))

