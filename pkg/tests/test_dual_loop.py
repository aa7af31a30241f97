import json
import threading

import pytest

from modroute.backends import RuleBasedBackend
from modroute.core import DiagnosticFrame, Modality, RoutingConfig
from modroute.dual_loop import (
    HistoryWindow,
    LoopSchedule,
    ScheduleError,
    run_episode,
    run_episode_wallclock,
    single_loop_episode,
    static_fusion_episode,
)
from modroute.engine import route_step, static_state
from modroute.episode import EpisodeLog
from modroute.knowledge import KnowledgeEntry, KnowledgeRepository, consolidate
from modroute.memory import ComponentKind, MemoryStore, Transition
from modroute.metrics import compute_report
from modroute.stress import PerturbationKind, PerturbationSpec, generate_trace, multi_scene_trace


def constant(n, dt=0.5, v=0.7):
    return [DiagnosticFrame.uniform(v, i * dt) for i in range(n)]


def oscillating(n, dt=0.5):
    return [DiagnosticFrame.uniform(0.3 if i % 2 else 0.7, i * dt) for i in range(n)]


class TestSchedule:
    def test_k(self):
        assert LoopSchedule.from_hz(2, 1).k == 2
        assert LoopSchedule.from_hz(10, 1).k == 10

    @pytest.mark.parametrize("fast,slow", [(1, 2), (2, 0.8), (3, 2)])
    def test_rejects_non_multiple(self, fast, slow):
        with pytest.raises(ValueError):
            LoopSchedule.from_hz(fast, slow)

    def test_duration_ticks(self):
        assert LoopSchedule(0.5, 1.0, duration=10.0).n_ticks(100) == 20

    def test_trace_mismatch(self):
        with pytest.raises(ScheduleError):
            run_episode(constant(4, dt=0.25), RuleBasedBackend(), RoutingConfig())
        with pytest.raises(ScheduleError):
            run_episode(constant(4), RuleBasedBackend(), RoutingConfig(),
                        LoopSchedule(duration=10.0))


class TestHistoryWindow:
    def test_bounded_and_ordered(self):
        h = HistoryWindow(2)
        for f in constant(5):
            h.push(f, static_state())
        assert len(h) == 2
        assert [f.timestamp for f, _ in h.items()] == [1.5, 2.0]
        with pytest.raises(ValueError):
            h.push(constant(1)[0], static_state())
        assert h.summary()["t_start"] == 1.5


class TestRunEpisode:
    def test_counts_for_two_to_one(self):
        log = run_episode(constant(20), RuleBasedBackend(), RoutingConfig(), LoopSchedule.from_hz(2, 1))
        assert len(log) == 20
        assert sum(r.routed for r in log) == 10
        assert [r.tick for r in log if r.routed] == list(range(0, 20, 2))
        assert all(r.memory_time <= r.timestamp for r in log)
        assert all(r.command.active_set == r.state.active_set for r in log)

    def test_reactive_tick_reuses_last_committed_state(self):
        frames = oscillating(10)
        log = run_episode(frames, RuleBasedBackend(), RoutingConfig())
        for a, b in zip(log.records[::2], log.records[1::2]):
            assert b.state == a.state and b.memory_time == a.timestamp

    def test_slow_deliberation_never_skips_reactive_ticks(self):
        frames = oscillating(20)
        sched = LoopSchedule(0.5, 1.0, latency=1.5)
        log = run_episode(frames, RuleBasedBackend(), RoutingConfig(), sched)
        assert len(log) == 20
        # nothing committed until t = 1.5, then the loop runs on stale snapshots
        assert [r.memory_time for r in log[:3]] == [None, None, None]
        assert log[0].state == static_state(0)
        staleness = [r.timestamp - r.memory_time for r in log if r.memory_time is not None]
        assert max(staleness) > 1.0
        taus = [r.memory_time for r in log if r.memory_time is not None]
        assert taus == sorted(taus)
        # one cycle in flight at a time: commits every 2 s instead of every 1 s
        assert [r.timestamp for r in log if r.routed] == [1.5, 3.5, 5.5, 7.5, 9.5]

    def test_k1_matches_direct_route_step_calls(self):
        cfg = RoutingConfig(dt_fast=0.5, dt_slow=0.5)
        frames = oscillating(12)
        log = run_episode(frames, RuleBasedBackend(), cfg, recall=False)
        prev, want = None, []
        for f in frames:
            prev = route_step(f, prev, RuleBasedBackend(), None, cfg).state
            want.append(prev)
        assert log.states == want

    def test_ema_runs_at_deliberative_period(self):
        cfg = RoutingConfig(tau=1.0)
        frames, _ = multi_scene_trace(0)
        dual = run_episode(frames, RuleBasedBackend(), cfg)
        single = single_loop_episode(frames, RuleBasedBackend(), cfg)
        assert dual.routed_states != single.routed_states

    def test_oscillating_trace_recall_differs_from_single_loop(self):
        frames = [DiagnosticFrame.uniform((0.3, 0.5, 0.7)[i % 3], i * 0.5) for i in range(20)]
        dual = compute_report(run_episode(frames, RuleBasedBackend(), RoutingConfig()))
        single = compute_report(single_loop_episode(frames, RuleBasedBackend(), RoutingConfig()))
        assert single.recall_attempts == 20 and dual.recall_attempts == 10
        assert dual.mrr_cumulative != single.mrr_cumulative

    def test_empty_trace(self):
        assert len(run_episode([], RuleBasedBackend(), RoutingConfig())) == 0
        assert len(single_loop_episode([], RuleBasedBackend(), RoutingConfig())) == 0
        assert len(static_fusion_episode([])) == 0

    def test_backend_errors_propagate(self):
        class Broken:
            def score(self, frame, context=None):
                raise RuntimeError("model crashed")

        with pytest.raises(RuntimeError, match="crashed"):
            run_episode(constant(4), Broken(), RoutingConfig())

    def test_episode_end_closes_short_and_mid_term_memory(self):
        store = MemoryStore()
        run_episode(constant(8), RuleBasedBackend(), RoutingConfig(), memory=store)
        snap = store.snapshot()
        for kind in ComponentKind:
            if kind is not ComponentKind.KNOWLEDGE_REPOSITORY:
                assert kind not in snap

    def test_scene_change_consolidates_into_knowledge(self):
        frames, scenes = multi_scene_trace(0)
        repo = KnowledgeRepository()
        store = MemoryStore()
        log = run_episode(frames, RuleBasedBackend(), RoutingConfig(), scene_ids=scenes,
                          knowledge=repo, memory=store, quality_threshold=0.0)
        assert [e.scene_id for e in repo.entries] == ["scene-0", "scene-1", "scene-2"]
        kr = [e for e in store.events if e.component is ComponentKind.KNOWLEDGE_REPOSITORY]
        assert [e.transition for e in kr][:2] == [Transition.GENERATION, Transition.READING]
        assert log.memory_events == store.events


class TestWallClock:
    def test_short_run(self):
        frames = constant(6)
        log = run_episode_wallclock(frames, RuleBasedBackend(), RoutingConfig(),
                                    LoopSchedule(0.5, 1.0, simulated=False), time_scale=0.02)
        assert len(log) == 6
        taus = [r.memory_time for r in log if r.memory_time is not None]
        assert taus == sorted(taus)
        assert not any(t.name == "deliberative" for t in threading.enumerate())

    def test_dispatch_from_run_episode(self):
        frames = constant(4)
        log = run_episode(frames, RuleBasedBackend(), RoutingConfig(),
                          LoopSchedule(0.5, 1.0, simulated=False, duration=0.5))
        assert len(log) == 1


class TestKnowledge:
    def _log(self, weights_by_scene):
        from test_metrics import rec

        recs, i = [], 0
        for sid, w in weights_by_scene:
            for _ in range(4):
                r = rec(i, {Modality.CAMERA, Modality.LIDAR, Modality.RADAR}, w)
                recs.append(r.__class__(**{**r.__dict__, "scene_id": sid}))
                i += 1
        return EpisodeLog(recs)

    def test_threshold(self):
        log = self._log([("a", (1 / 3,) * 3), ("b", (0.5, 0.3, 0.2))])
        assert [e.scene_id for e in consolidate(log, 0.9)] == ["a"]
        assert [e.scene_id for e in consolidate(log, 0.5)] == ["a", "b"]
        assert consolidate(EpisodeLog(), 0.0) == []

    def test_entry_contents(self):
        entry = consolidate(self._log([("a", (1 / 3,) * 3)]), 0.9)[0]
        assert entry.rsi == 1.0
        assert entry.active_set == ("camera", "lidar", "radar")
        assert entry.final_weights == {"camera": 1 / 3, "lidar": 1 / 3, "radar": 1 / 3}

    def test_repository_file_is_append_only_and_capped(self, tmp_path):
        path = tmp_path / "kr.jsonl"
        repo = KnowledgeRepository(path, cap=2)
        mk = [KnowledgeEntry(f"s{i}", 0.5, ("camera",), {"camera": 1.0}, 1.0, float(i)) for i in range(3)]
        assert repo.add(mk[:2]) == 0
        assert repo.add(mk[2:]) == 1
        assert [e.scene_id for e in repo.entries] == ["s1", "s2"]
        lines = path.read_text().splitlines()
        assert len(lines) == 3 and json.loads(lines[0])["scene_id"] == "s0"
        again = KnowledgeRepository.load(path, cap=2)
        assert again.entries == repo.entries
        assert again.lookup("s2") == mk[2] and again.lookup("s0") is None


class TestEpisodeLog:
    def test_jsonl_round_trip(self, tmp_path):
        frames, scenes = multi_scene_trace(1, scene_duration=5.0)
        log = run_episode(frames, RuleBasedBackend(), RoutingConfig(), scene_ids=scenes)
        log.to_jsonl(tmp_path / "e.jsonl")
        back = EpisodeLog.from_jsonl(tmp_path / "e.jsonl")
        assert back.records == log.records

    def test_rejects_non_increasing(self):
        log = static_fusion_episode(constant(2))
        with pytest.raises(ValueError):
            log.append(log.records[0])

    def test_csv_rows(self, tmp_path):
        log = run_episode(generate_trace(PerturbationSpec(PerturbationKind.NOISE, "camera", 5.0)),
                          RuleBasedBackend(), RoutingConfig())
        log.to_csv(tmp_path / "e.csv")
        lines = (tmp_path / "e.csv").read_text().splitlines()
        assert lines[0].split(",") == ["t", "tau", "active_mask", "w_smooth_camera", "w_smooth_lidar",
                                       "w_smooth_radar", "recall_hit", "fallback", "degraded"]
        assert len(lines) == 11
