"""Scoring backends that turn a diagnostic frame into a RouterDecision.

``RuleBasedBackend`` is the deterministic reference. Reliability rules, one
per modality, read the interpretation column of the indicator taxonomy:

    r_camera = mean(brightness_mean, contrast, edge_density) * illumination
    r_lidar  = mean(point_density, 1 - noise_ratio, reflectivity_ratio)
    r_radar  = mean(target_density, rcs_stability, 1 - detection_probability)

Radar detection probability is inverted ("high probability -> low
reliability"). Usage follows a two-tier scene-complexity rule:

    complexity = mean(map_complexity, weather_severity, 1 - illumination)
    camera always on; radar on iff complexity >= 0.3; lidar on iff >= 0.6
"""
from __future__ import annotations

import json
import logging
import threading
import urllib.error
import urllib.request
from pathlib import Path
from typing import Any, Callable, Iterable

import jsonschema
import numpy as np

from .core import (
    MODALITIES,
    DecisionSource,
    DiagnosticFrame,
    RouterDecision,
    validate_frame,
)

log = logging.getLogger(__name__)

RADAR_USAGE_TIER = 0.3
LIDAR_USAGE_TIER = 0.6


class BackendError(RuntimeError):
    pass


class ScriptExhaustedError(BackendError):
    pass


class RemoteError(BackendError):
    pass


class SchemaError(RemoteError):
    pass


def _check(frame: DiagnosticFrame) -> None:
    res = validate_frame(frame)
    if not res:
        raise ValueError(f"invalid frame: {res.message}")


def rule_based_reliability(frame: DiagnosticFrame) -> np.ndarray:
    cam, lid, rad = frame.camera, frame.lidar, frame.radar
    r_cam = (cam.brightness_mean + cam.contrast + cam.edge_density) / 3.0
    r_cam *= frame.external.illumination
    r_lidar = (lid.point_density + (1.0 - lid.noise_ratio) + lid.reflectivity_ratio) / 3.0
    r_radar = (rad.target_density + rad.rcs_stability + (1.0 - rad.detection_probability)) / 3.0
    return np.clip(np.array([r_cam, r_lidar, r_radar]), 0.0, 1.0)


def scene_complexity(frame: DiagnosticFrame) -> float:
    ext = frame.external
    return (frame.map_complexity + ext.weather_severity + (1.0 - ext.illumination)) / 3.0


def rule_based_usage(frame: DiagnosticFrame) -> tuple[tuple[int, int, int], float]:
    c = scene_complexity(frame)
    return usage_from_complexity(c), c


def usage_from_complexity(c: float) -> tuple[int, int, int]:
    return (1, int(c >= LIDAR_USAGE_TIER), int(c >= RADAR_USAGE_TIER))


class RuleBasedBackend:
    """Pure function of the frame; the memory context is ignored."""

    kind = "rule"

    def score(self, frame: DiagnosticFrame, context: Any = None) -> RouterDecision:
        _check(frame)
        usage, c = rule_based_usage(frame)
        r = rule_based_reliability(frame)
        return RouterDecision(usage, tuple(r), min(max(c, 0.0), 1.0), DecisionSource.RULE_BASED)


class ScriptedBackend:
    """Replays a fixed decision sequence, one decision per call."""

    kind = "scripted"

    def __init__(self, decisions: Iterable[RouterDecision]):
        self._decisions = [d.with_source(DecisionSource.SCRIPTED) for d in decisions]
        self._pos = 0

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ScriptedBackend":
        decisions = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if line.strip():
                    try:
                        decisions.append(RouterDecision.from_dict(json.loads(line)))
                    except (KeyError, ValueError, TypeError) as exc:
                        raise ValueError(f"{path}:{lineno}: bad decision: {exc}") from exc
        return cls(decisions)

    def __len__(self) -> int:
        return len(self._decisions)

    def reset(self) -> None:
        self._pos = 0

    def score(self, frame: DiagnosticFrame, context: Any = None) -> RouterDecision:
        if self._pos >= len(self._decisions):
            raise ScriptExhaustedError(
                f"decision script exhausted after {len(self._decisions)} decisions"
            )
        decision = self._decisions[self._pos]
        self._pos += 1
        return decision


def write_decisions(decisions: Iterable[RouterDecision], path: str | Path) -> None:
    with open(path, "w") as fh:
        for d in decisions:
            fh.write(json.dumps(d.to_dict(), sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# Remote contract

_UNIT = {"type": "number", "minimum": 0, "maximum": 1}
_BIT = {"type": "integer", "enum": [0, 1]}


def _per_modality_schema(item: dict) -> dict:
    names = [m.value for m in MODALITIES]
    return {
        "type": "object",
        "properties": {n: item for n in names},
        "required": names,
        "additionalProperties": False,
    }


RESPONSE_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "reliability": _per_modality_schema(_UNIT),
        "scene_complexity": _UNIT,
        "usage": _per_modality_schema(_BIT),
    },
    "required": ["reliability", "scene_complexity", "usage"],
}

_validator = jsonschema.Draft202012Validator(RESPONSE_SCHEMA)

ROUTING_INSTRUCTIONS = (
    "You are a sensor router for an automated vehicle. Using the scene description, "
    "contextual indicators and numerical diagnostics, return strictly valid JSON with: "
    "per-modality reliability scores in [0,1] for camera, lidar and radar; a scalar "
    "scene_complexity in [0,1]; and binary usage indicators (0 or 1) for each modality. "
    "Return only the JSON object."
)

_CONTEXTUAL = {
    "camera.brightness_mean": "illumination_level",
    "camera.contrast": "visibility_quality",
    "camera.edge_density": "texture_density",
    "lidar.point_density": "lidar_data_completeness",
    "lidar.noise_ratio": "lidar_signal_quality",
    "lidar.reflectivity_ratio": "lidar_signal_quality",
    "radar.target_density": "radar_data_completeness",
    "radar.rcs_stability": "radar_signal_stability",
    "radar.detection_probability": "radar_detection_reliability",
    "external.weather_severity": "weather",
    "external.illumination": "illumination_level",
    "map_complexity": "map_scene_complexity",
}


def _describe(frame: DiagnosticFrame) -> str:
    ext = frame.external
    light = "daylight" if ext.illumination >= 0.6 else "dusk" if ext.illumination >= 0.3 else "night"
    weather = "clear" if ext.weather_severity < 0.3 else "adverse" if ext.weather_severity < 0.7 else "severe"
    road = "simple" if frame.map_complexity < 0.3 else "moderate" if frame.map_complexity < 0.6 else "complex"
    return f"{light}, {weather} weather, {road} road layout"


def remote_request_body(frame: DiagnosticFrame, context: Any = None) -> dict[str, Any]:
    """Build the JSON request document for the remote router."""
    metrics = {}
    for name, value in frame.indicator_items():
        group, _, key = name.rpartition(".")
        metrics.setdefault(group or "map", {})[key] = value
    contextual: dict[str, list[str]] = {}
    for name, value in frame.indicator_items():
        contextual.setdefault(_CONTEXTUAL[name], []).append(name)
    body = {
        "instructions": ROUTING_INSTRUCTIONS,
        "timestamp": frame.timestamp,
        "scene_description": _describe(frame),
        "contextual_indicators": contextual,
        "numerical_metrics": metrics,
        "response_schema": RESPONSE_SCHEMA,
    }
    if context is not None:
        summary = getattr(context, "summary", None)
        body["memory"] = summary() if callable(summary) else context
    return body


def parse_remote_response(doc: Any) -> RouterDecision:
    """Validate a response document; never returns a partial decision."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"response is not valid JSON: {exc}") from exc
    errors = sorted(_validator.iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.path) or "<root>"
        raise SchemaError(f"response violates schema at {where}: {e.message}")
    return RouterDecision(
        usage=tuple(doc["usage"][m.value] for m in MODALITIES),
        reliability=tuple(doc["reliability"][m.value] for m in MODALITIES),
        scene_complexity=doc["scene_complexity"],
        source=DecisionSource.REMOTE,
    )


Transport = Callable[[str, bytes, float], bytes]


def http_post(url: str, body: bytes, timeout: float) -> bytes:
    req = urllib.request.Request(
        url, data=body, method="POST", headers={"Content-Type": "application/json"}
    )
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return resp.read()


class RemoteBackend:
    """JSON-over-HTTP client for an external router model.

    At most one request is in flight per instance; a second concurrent call
    fails immediately instead of queueing.
    """

    kind = "remote"

    def __init__(self, url: str, timeout: float = 5.0, transport: Transport | None = None):
        if timeout <= 0:
            raise ValueError("timeout must be > 0")
        self.url = url
        self.timeout = timeout
        self._transport = transport or http_post
        self._inflight = threading.Lock()

    def score(self, frame: DiagnosticFrame, context: Any = None) -> RouterDecision:
        _check(frame)
        if not self._inflight.acquire(blocking=False):
            raise RemoteError("a remote request is already in flight")
        try:
            payload = json.dumps(remote_request_body(frame, context), sort_keys=True).encode()
            try:
                raw = self._transport(self.url, payload, self.timeout)
            except (urllib.error.URLError, TimeoutError, OSError) as exc:
                raise RemoteError(f"remote router unreachable at {self.url}: {exc}") from exc
        finally:
            self._inflight.release()
        return parse_remote_response(raw)


class FallbackBackend:
    """Delegate to ``primary``; on any backend error score with ``fallback`` instead.

    The returned decision keeps the fallback's source tag, so logs show which
    path produced it.
    """

    def __init__(self, primary, fallback=None):
        self.primary = primary
        self.fallback = fallback or RuleBasedBackend()
        self.failures = 0
        self.kind = getattr(primary, "kind", "custom")

    def score(self, frame: DiagnosticFrame, context: Any = None) -> RouterDecision:
        try:
            return self.primary.score(frame, context)
        except BackendError as exc:
            self.failures += 1
            log.warning("primary backend failed (%s); using fallback", exc)
            return self.fallback.score(frame, context)

