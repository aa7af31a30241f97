import csv
import json
import math

import numpy as np
import pytest

from modroute.core import DiagnosticFrame, Modality, RoutingState
from modroute.dual_loop import static_fusion_episode
from modroute.episode import EpisodeLog, EpisodeRecord
from modroute.metrics import (
    MetricsReport,
    SwitchReport,
    compute_report,
    count_switches,
    displacement_errors,
    emit_report,
    jaccard,
    load_report,
    memory_recall_rate,
    routing_consistency,
    routing_efficiency,
    stability_index,
    stability_tick,
)

C, L, R = Modality.CAMERA, Modality.LIDAR, Modality.RADAR
ALL = frozenset({C, L, R})


def rec(i, active, smoothed=(1 / 3,) * 3, attempted=False, hit=False, dt=0.5):
    active = frozenset(active)
    s = RoutingState(i, active, active, active, (1, 1, 1), smoothed, smoothed, active)
    return EpisodeRecord(i, i * dt, DiagnosticFrame.uniform(0.5, i * dt), s,
                         recall_attempted=attempted, recall_hit=hit)


def log_of(actives, **kw):
    return EpisodeLog([rec(i, a, **kw) for i, a in enumerate(actives)])


class TestEfficiency:
    def test_all_active(self):
        assert routing_efficiency(log_of([ALL] * 5)) == 0.0

    def test_one_off(self):
        assert routing_efficiency(log_of([{C, L}] * 4)) == pytest.approx(1 / 3)

    def test_lidar_half(self):
        assert routing_efficiency(log_of([ALL, {C, R}] * 3)) == pytest.approx(1 / 6)

    def test_empty_log(self):
        with pytest.raises(ValueError):
            routing_efficiency(EpisodeLog())


class TestConsistency:
    def test_constant(self):
        assert routing_consistency(log_of([{C, R}] * 5)) == 1.0

    def test_half(self):
        assert routing_consistency(log_of([{C, L}, {C}])) == 0.5

    def test_disjoint_alternation(self):
        assert routing_consistency(log_of([{C}, {R}] * 4)) == 0.0

    def test_jaccard_empty_sets(self):
        assert jaccard(set(), set()) == 1.0


class TestStability:
    def test_equal_weights(self):
        assert stability_index(log_of([ALL] * 3)).value == 1.0

    def test_worked_example(self):
        assert stability_tick([0.5, 0.3, 0.2]) == pytest.approx(1 - 0.124722 / 0.333333, abs=1e-5)
        assert stability_tick([0.5, 0.3, 0.2]) == pytest.approx(0.62583, abs=1e-5)

    def test_static_fusion(self):
        log = static_fusion_episode([DiagnosticFrame.uniform(0.5, i * 0.5) for i in range(9)])
        assert stability_index(log).value == 1.0

    def test_zero_mean_tick_skipped(self):
        log = EpisodeLog([rec(0, {C, L}, (0.0, 0.0, 0.0)), rec(1, {C, L}, (0.5, 0.5, 0.0))])
        res = stability_index(log)
        assert res.value == 1.0 and res.skipped_ticks == 1

    def test_only_active_weights_count(self):
        log = EpisodeLog([rec(0, {C, L}, (0.5, 0.5, 0.9))])
        assert stability_index(log).value == 1.0


class TestRecallRate:
    def test_no_hits(self):
        log = log_of([ALL] * 4, attempted=True)
        assert memory_recall_rate(log).cumulative == 0.0

    def test_constant_replay(self):
        recs = [rec(i, ALL, attempted=True, hit=i > 0) for i in range(8)]
        assert memory_recall_rate(recs).cumulative == pytest.approx(7 / 8)

    def test_empty(self):
        rate = memory_recall_rate(EpisodeLog())
        assert rate.cumulative == 0.0 and rate.zero_attempts

    def test_rolling_window(self):
        # attempts at 0,1,...,9 s; hits at odd seconds
        recs = [rec(i, ALL, attempted=True, hit=i % 2 == 1, dt=1.0) for i in range(10)]
        rate = memory_recall_rate(recs, window=5.0)
        assert dict(rate.rolling)[9.0] == pytest.approx(3 / 5)  # attempts 5..9
        assert dict(rate.rolling)[0.0] == 0.0


class TestSwitches:
    def test_constant(self):
        assert count_switches([1, 1, 1]).tolist() == [0]

    def test_alternating(self):
        assert count_switches([0, 1, 0, 1]).tolist() == [3]

    def test_columns(self):
        assert count_switches([[0, 1, 1], [1, 1, 0], [0, 1, 0]]).tolist() == [2, 0, 1]

    def test_report_handles_zero_threshold_switches(self):
        rep = SwitchReport.from_series(np.zeros((4, 3)), np.zeros((4, 3)))
        assert rep.reduction_percent is None


class TestDisplacement:
    def test_identical(self):
        p = np.random.default_rng(0).normal(size=(6, 2))
        assert displacement_errors(p, p) == (0.0, 0.0)

    def test_constant_offset(self):
        p = np.zeros((5, 2))
        ade, fde = displacement_errors(p + [0, 2.5], p)
        assert ade == pytest.approx(2.5) and fde == pytest.approx(2.5)

    def test_final_point_shift(self):
        gt = np.array([[0, 0], [1, 0], [2, 0], [3, 0]], float)
        pred = gt.copy()
        pred[-1, 1] += 1.0
        assert displacement_errors(pred, gt) == (0.25, 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            displacement_errors(np.zeros((3, 2)), np.zeros((4, 2)))


class TestReport:
    def make(self):
        log = log_of([ALL, {C, L}, {C}], attempted=True)
        rep = compute_report(log, switches=SwitchReport.from_series([[0, 0, 1], [1, 0, 0]],
                                                                    [[0, 0, 1], [0, 0, 1]]),
                             trajectories=(np.zeros((3, 2)), np.ones((3, 2))))
        return log, rep

    def test_json_round_trip(self, tmp_path):
        log, rep = self.make()
        emit_report(rep, tmp_path, "json")
        assert load_report(tmp_path / "report.json") == rep
        assert MetricsReport.from_dict(json.loads(json.dumps(rep.to_dict()))) == rep

    def test_weights_csv_schema(self, tmp_path):
        log, rep = self.make()
        emit_report(rep, tmp_path, "json", log=log)
        rows = list(csv.reader(open(tmp_path / "weights.csv")))
        assert len(rows) == 1 + len(log)
        assert all(len(r) == 1 + 2 * 3 for r in rows)
        assert rows[0][0] == "t"

    def test_csv_format(self, tmp_path):
        _, rep = self.make()
        emit_report(rep, tmp_path, "csv")
        rows = dict(csv.reader(open(tmp_path / "report.csv")))
        assert float(rows["re"]) == pytest.approx(rep.re)
        assert rows["switches_threshold_total"] == "2"
        with pytest.raises(ValueError):
            emit_report(rep, tmp_path, "xml")

    def test_static_fusion_report(self):
        log = static_fusion_episode([DiagnosticFrame.uniform(0.5, i * 0.5) for i in range(10)])
        rep = compute_report(log)
        assert (rep.re, rep.rc, rep.rsi, rep.mrr_cumulative) == (0.0, 1.0, 1.0, 0.0)
        assert f"{rep.re:.2f} {rep.rc:.3f} {rep.rsi:.3f} {rep.mrr_cumulative:.3f}" == "0.00 1.000 1.000 0.000"

    def test_ade_is_sqrt2(self):
        _, rep = self.make()
        assert rep.ade == pytest.approx(math.sqrt(2))
