"""Command-line entry point: ``modroute {stress,replay,run,report}``.

Exit status is 0 on success, 1 on a usage error and 2 on a runtime error
(unreadable input, schema violation, backend failure). Every artifact is a
pure function of argv, so repeated invocations are byte-identical.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .backends import (
    BackendError,
    FallbackBackend,
    RemoteBackend,
    RuleBasedBackend,
    ScriptedBackend,
    rule_based_reliability,
)
from .core import MODALITIES, Modality, RoutingConfig, load_config, read_trace, write_trace
from .dual_loop import LoopSchedule, ScheduleError, run_episode, single_loop_episode
from .episode import EpisodeLog
from .knowledge import DEFAULT_QUALITY_THRESHOLD, KnowledgeRepository
from .memory import write_events_csv
from .metrics import (
    compare_switching,
    compute_report,
    emit_report,
    threshold_states,
    write_states_csv,
)
from .stress import (
    PerturbationKind,
    PerturbationSpec,
    canonical_table3_trace,
    generate_trace,
    multi_scene_trace,
)

U64_MAX = 2**64 - 1

_KINDS = {
    "gradual": PerturbationKind.GRADUAL,
    "abrupt": PerturbationKind.ABRUPT,
    "noise": PerturbationKind.NOISE,
    **{k.value: k for k in PerturbationKind},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _backend_spec(text: str) -> tuple[str, str | None]:
    kind, _, arg = text.partition(":")
    if kind == "rule" and not arg:
        return kind, None
    if kind in ("scripted", "remote") and arg:
        return kind, arg
    raise argparse.ArgumentTypeError("expected rule, scripted:PATH or remote:URL")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="routing config JSON (thresholds, delta, tau, ...)")
    common.add_argument("--seed", type=_seed, default=0, help="unsigned 64-bit seed for all randomness (default 0)")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory (default: current directory)")
    common.add_argument("--format", choices=("json", "csv"), default="json",
                        help="report format: report.json or report.csv (default json)")

    loop = argparse.ArgumentParser(add_help=False)
    loop.add_argument("--backend", type=_backend_spec, default=("rule", None),
                      metavar="{rule,scripted:PATH,remote:URL}",
                      help="router backend; remote falls back to rule-based on failure (default rule)")
    loop.add_argument("--fast-hz", type=_positive, default=None, help="reactive loop rate (default from config, 2 Hz)")
    loop.add_argument("--slow-hz", type=_positive, default=None, help="deliberative loop rate (default from config, 1 Hz)")
    loop.add_argument("--single-loop", action="store_true", help="route synchronously every reactive tick")
    loop.add_argument("--no-memory", action="store_true", help="disable recall-cache reuse of routing decisions")
    loop.add_argument("--knowledge", metavar="PATH",
                      help="persistent knowledge repository to load and append to "
                           "(default: fresh OUT/knowledge.jsonl)")
    loop.add_argument("--quality-threshold", type=float, default=DEFAULT_QUALITY_THRESHOLD,
                      help="minimum scene stability index for knowledge consolidation (default 0.6)")
    loop.add_argument("--latency", type=float, default=0.0,
                      help="simulated seconds from a deliberative tick to its memory commit (default 0)")

    p = _Parser(prog="modroute", description="Reliability-aware modality routing with dual-loop memory.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("stress", parents=[common], help="generate a perturbation trace and compare switching",
                       description="Generate a stress trace, route it, and compare threshold-only vs "
                                   "hysteresis switching.")
    s.add_argument("--canonical", action="store_true",
                   help="use the frozen 60 s fluctuation trace; all other stress parameters and --seed are ignored")
    s.add_argument("--kind", choices=sorted(_KINDS), default="noise", help="perturbation type (default noise)")
    s.add_argument("--modality", action="append", choices=[m.value for m in MODALITIES],
                   help="target modality; repeat for several (default camera)")
    s.add_argument("--duration", type=_positive, default=60.0, help="trace length in seconds (default 60)")
    s.add_argument("--amplitude", type=float, default=0.15, help="noise amplitude per indicator (default 0.15)")
    s.add_argument("--period", type=int, default=2, help="noise period in ticks, >= 2 (default 2)")

    r = sub.add_parser("replay", parents=[common, loop], help="route a stored trace",
                       description="Route a stored JSONL trace and write the episode and report.")
    r.add_argument("trace", help="trace file (one diagnostic frame per line)")

    run = sub.add_parser("run", parents=[common, loop], help="run a dual-loop episode",
                         description="Run a full episode on a built-in three-scene trace (or --trace).")
    run.add_argument("--trace", metavar="PATH", help="trace file instead of the built-in scenario")
    run.add_argument("--scene-duration", type=_positive, default=20.0,
                     help="seconds per scene of the built-in scenario (default 20)")

    rep = sub.add_parser("report", parents=[common], help="recompute metrics from a stored episode",
                         description="Recompute metrics from an episode.jsonl file.")
    rep.add_argument("episode", help="episode file written by run or replay")
    return p


def _config(args, fast_hz=None, slow_hz=None) -> RoutingConfig:
    config = load_config(args.config) if args.config else RoutingConfig()
    changes = {}
    if fast_hz:
        changes["dt_fast"] = 1.0 / fast_hz
    if slow_hz:
        changes["dt_slow"] = 1.0 / slow_hz
    return config.replace(**changes) if changes else config


def _backend(spec: tuple[str, str | None]):
    kind, arg = spec
    if kind == "scripted":
        return ScriptedBackend.from_jsonl(arg)
    if kind == "remote":
        return FallbackBackend(RemoteBackend(arg))
    return RuleBasedBackend()


def _episode(args, trace, scene_ids, out: Path) -> EpisodeLog:
    config = _config(args, args.fast_hz, args.slow_hz)
    backend = _backend(args.backend)
    if args.knowledge:
        repo = KnowledgeRepository.load(args.knowledge)
    else:
        kpath = out / "knowledge.jsonl"
        kpath.write_text("")
        repo = KnowledgeRepository(kpath)
    kw = dict(scene_ids=scene_ids, recall=not args.no_memory, knowledge=repo,
              quality_threshold=args.quality_threshold)
    if args.single_loop:
        log = single_loop_episode(trace, backend, config, **kw)
    else:
        schedule = LoopSchedule.from_config(config, latency=args.latency)
        log = run_episode(trace, backend, config, schedule, **kw)
    return log


def _write_episode(log: EpisodeLog, trace, out: Path, fmt: str, switches=None) -> None:
    write_trace(trace, out / "trace.jsonl")
    log.to_jsonl(out / "episode.jsonl")
    log.to_csv(out / "episode.csv")
    write_events_csv(log.memory_events, out / "memory_events.csv")
    emit_report(compute_report(log, switches=switches), out, fmt, log=log)


def cmd_stress(args) -> None:
    out = Path(args.out)
    config = _config(args)
    if args.canonical:
        trace = canonical_table3_trace()
    else:
        targets = tuple(Modality(m) for m in (args.modality or ["camera"]))
        spec = PerturbationSpec(_KINDS[args.kind], targets, args.duration, config.dt_fast,
                                amplitude=args.amplitude, period=args.period, seed=args.seed)
        trace = generate_trace(spec)
    config = config.replace(dt_fast=trace[1].timestamp - trace[0].timestamp) if len(trace) > 1 else config
    reliabilities = [rule_based_reliability(f) for f in trace]
    switches = compare_switching(reliabilities, config)
    log = single_loop_episode(trace, RuleBasedBackend(), config)
    out.mkdir(parents=True, exist_ok=True)
    _write_episode(log, trace, out, args.format, switches)
    write_states_csv([f.timestamp for f in trace], threshold_states(reliabilities, config.theta),
                     out / "states_threshold.csv")
    print(f"switches: threshold {switches.threshold_total}, hysteresis {switches.hysteresis_total}, "
          f"reduction {_pct(switches.reduction_percent)}")


def _pct(x) -> str:
    return "n/a" if x is None else f"{x:.1f}%"


def cmd_replay(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace = read_trace(args.trace)
    log = _episode(args, trace, None, out)
    _write_episode(log, trace, out, args.format)
    _summary(log)


def cmd_run(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.trace:
        trace, scene_ids = read_trace(args.trace), None
    else:
        config = _config(args, args.fast_hz, args.slow_hz)
        trace, scene_ids = multi_scene_trace(args.seed, args.scene_duration, config.dt_fast)
    log = _episode(args, trace, scene_ids, out)
    _write_episode(log, trace, out, args.format)
    _summary(log)


def cmd_report(args) -> None:
    path = Path(args.episode)
    if not path.is_file():
        raise FileNotFoundError(f"episode file not found: {path}")
    log = EpisodeLog.from_jsonl(path)
    if not log.records:
        raise ValueError(f"{path}: episode has no records")
    emit_report(compute_report(log), Path(args.out), args.format, log=log)
    _summary(log)


def _summary(log: EpisodeLog) -> None:
    rep = compute_report(log)
    print(f"ticks {rep.ticks}  RE {rep.re:.4f}  RC {rep.rc:.4f}  RSI {rep.rsi:.4f}  "
          f"MRR {rep.mrr_cumulative:.4f} ({rep.recall_attempts} attempts)")


COMMANDS = {"stress": cmd_stress, "replay": cmd_replay, "run": cmd_run, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"modroute: error: {exc.filename or exc}: file not found" if exc.filename
              else f"modroute: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, ScheduleError, BackendError, json.JSONDecodeError) as exc:
        print(f"modroute: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
