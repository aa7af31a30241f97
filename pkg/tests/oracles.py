"""Brute-force reference implementations, written without the package's helpers.

Plain Python loops over lists and dicts; nothing here imports modroute
internals so an error in the library cannot leak into its own check.
"""
from __future__ import annotations

import math
from itertools import combinations

NAMES = ("camera", "lidar", "radar")


def reliability_from_doc(doc: dict) -> list[float]:
    """Rule-based reliabilities from a frame's JSON document."""
    c, l, r = doc["camera"], doc["lidar"], doc["radar"]
    illum = doc["external"]["illumination"]
    vals = [
        (c["brightness_mean"] + c["contrast"] + c["edge_density"]) / 3 * illum,
        (l["point_density"] + 1 - l["noise_ratio"] + l["reflectivity_ratio"]) / 3,
        (r["target_density"] + r["rcs_stability"] + 1 - r["detection_probability"]) / 3,
    ]
    return [min(1.0, max(0.0, v)) for v in vals]


def threshold_series(stream: list[float], theta: float) -> list[int]:
    return [1 if x >= theta else 0 for x in stream]


def hysteresis_series(stream: list[float], theta: float, delta: float) -> list[int]:
    out = []
    for i, x in enumerate(stream):
        if i == 0:
            out.append(1 if x >= theta else 0)
            continue
        prev = out[-1]
        if prev == 0 and x >= theta + delta:
            out.append(1)
        elif prev == 1 and x <= theta - delta:
            out.append(0)
        else:
            out.append(prev)
    return out


def switches(series: list[int]) -> int:
    n = 0
    for a, b in zip(series, series[1:]):
        if a != b:
            n += 1
    return n


def fused_set(usage: list[int], rel: list[float], theta: list[float]) -> tuple[set, bool]:
    """Enumerate every subset and keep the largest one satisfying U and R, then fall back."""
    universe = range(len(usage))
    best: set = set()
    for size in range(len(usage), 0, -1):
        for combo in combinations(universe, size):
            if all(usage[i] == 1 and rel[i] >= theta[i] for i in combo):
                best = set(combo)
                break
        if best:
            break
    if best:
        return best, False
    return {i for i in universe if rel[i] >= theta[i]}, True


def weights(rel: list[float], fused: set) -> list[float]:
    total = 0.0
    for i in fused:
        total += rel[i]
    out = []
    for i in range(len(rel)):
        if i not in fused:
            out.append(0.0)
        elif total > 0:
            out.append(rel[i] / total)
        else:
            out.append(1.0 / len(fused))
    return out


def ema_closed_form(prev: float, w: float, dt: float, tau: float) -> float:
    alpha = 1.0 - math.exp(-dt / tau)
    return alpha * w + (1.0 - alpha) * prev


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def stability(active_weights: list[float]) -> float | None:
    n = len(active_weights)
    if n == 0:
        return None
    if n == 1:
        return 1.0
    mean = sum(active_weights) / n
    if mean == 0:
        return None
    var = sum((x - mean) ** 2 for x in active_weights) / n
    return 1.0 - math.sqrt(var) / mean


def displacement(pred: list[tuple[float, float]], gt: list[tuple[float, float]]) -> tuple[float, float]:
    dists = [math.hypot(p[0] - g[0], p[1] - g[1]) for p, g in zip(pred, gt)]
    return sum(dists) / len(dists), dists[-1]


def recall_replay(keys: list, times: list[float], ttl: float) -> list[bool]:
    """Hit/miss per attempt: a key hits if it was stored within ttl; misses store it."""
    stored: dict = {}
    hits = []
    for k, t in zip(keys, times):
        if k in stored and t - stored[k] <= ttl:
            hits.append(True)
        else:
            hits.append(False)
            stored[k] = t
    return hits
