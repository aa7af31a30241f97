import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from modroute.backends import rule_based_reliability
from modroute.core import FeatureVector, Modality, validate_trace
from modroute.stress import (
    PerturbationKind,
    PerturbationSpec,
    StubPerception,
    canonical_table3_trace,
    fuse_features,
    generate_trace,
    level_curve,
    multi_scene_trace,
    noise_phases,
)

C, L, R = Modality.CAMERA, Modality.LIDAR, Modality.RADAR


def rel(trace):
    return np.array([rule_based_reliability(f) for f in trace])


def test_gradual_lidar_degradation():
    spec = PerturbationSpec(PerturbationKind.GRADUAL, L, 20.0, 0.5, start_level=0.9, end_level=0.1)
    trace = generate_trace(spec)
    assert len(trace) == 40
    r = rel(trace)[:, 1]
    assert np.all(np.diff(r) <= 1e-12)
    assert r[0] == pytest.approx(0.9) and r[-1] == pytest.approx(0.1)


def test_abrupt_radar_failure():
    spec = PerturbationSpec(PerturbationKind.ABRUPT, R, 20.0, 0.5, onset=5.0, floor=0.05)
    trace = generate_trace(spec)
    r = rel(trace)[:, 2]
    t = np.array([f.timestamp for f in trace])
    assert np.all(r[t < 5.0] >= 0.8)
    assert np.all(r[t >= 5.0] <= 0.1)


@pytest.mark.parametrize("seed", range(5))
def test_period_two_noise_crosses_threshold_every_tick(seed):
    spec = PerturbationSpec(PerturbationKind.NOISE, (C, L, R), 10.0, 0.5, carrier=0.5,
                            amplitude=0.15, period=2, seed=seed)
    r = rel(generate_trace(spec))
    above = r >= 0.5
    assert np.all(above[1:] != above[:-1])


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(list(PerturbationKind)), st.sets(st.sampled_from([C, L, R]), min_size=1),
       st.integers(0, 2**32), st.floats(0.0, 0.3), st.integers(2, 15))
def test_reliability_follows_engineered_curve(kind, targets, seed, amp, period):
    spec = PerturbationSpec(kind, tuple(targets), 8.0, 0.5, amplitude=amp, period=period, seed=seed)
    trace = generate_trace(spec)
    assert validate_trace(trace)
    assert np.allclose(rel(trace), level_curve(spec), atol=1e-12)


def test_untargeted_modalities_stay_at_baseline():
    spec = PerturbationSpec(PerturbationKind.ABRUPT, R, 10.0, 0.5, baseline=0.8)
    r = rel(generate_trace(spec))
    assert np.allclose(r[:, :2], 0.8)


def test_generation_is_deterministic_and_seeded():
    spec = PerturbationSpec(PerturbationKind.NOISE, C, 10.0, 0.5, seed=9)
    assert generate_trace(spec) == generate_trace(spec)
    assert noise_phases(9).tolist() == noise_phases(9).tolist()
    assert noise_phases(9).tolist() != noise_phases(10).tolist()


@pytest.mark.parametrize("kw", [
    dict(duration=0), dict(period=1), dict(carrier=0.9, amplitude=0.2), dict(seed=-1),
    dict(targets=()), dict(start_level=1.2),
])
def test_spec_validation(kw):
    base = dict(kind=PerturbationKind.NOISE, targets=(C,), duration=5.0)
    base.update(kw)
    with pytest.raises(ValueError):
        PerturbationSpec(**base)


def test_spec_round_trip(tmp_path):
    spec = PerturbationSpec(PerturbationKind.GRADUAL, (L, R), 12.0, seed=3)
    assert PerturbationSpec.from_dict(spec.to_dict()) == spec
    import json

    (tmp_path / "s.json").write_text(json.dumps(spec.to_dict()))
    assert PerturbationSpec.load(tmp_path / "s.json") == spec


def test_combined_specs_reject_overlap():
    a = PerturbationSpec(PerturbationKind.NOISE, C, 5.0)
    with pytest.raises(ValueError, match="twice"):
        generate_trace(a, PerturbationSpec(PerturbationKind.ABRUPT, C, 5.0))
    with pytest.raises(ValueError, match="share"):
        generate_trace(a, PerturbationSpec(PerturbationKind.ABRUPT, L, 6.0))


class TestCanonical:
    def test_length(self):
        assert len(canonical_table3_trace()) == 120

    def test_per_modality_counts(self):
        r = rel(canonical_table3_trace())
        for j, (min_thr) in enumerate((8, 14, 14)):
            stream = r[:, j].tolist()
            assert oracles.switches(oracles.threshold_series(stream, 0.5)) >= min_thr
            assert oracles.switches(oracles.hysteresis_series(stream, 0.5, 0.05)) <= 3


def test_multi_scene_trace_layout():
    frames, ids = multi_scene_trace(0)
    assert len(frames) == 120 and validate_trace(frames)
    assert ids[0] == "scene-0" and ids[40] == "scene-1" and ids[-1] == "scene-2"
    assert sorted(set(ids)) == ["scene-0", "scene-1", "scene-2"]


class TestFusion:
    def test_single_active_identity(self):
        v = FeatureVector(C, (1.5, -2.0, 3.0))
        assert fuse_features([v], [1.0]).values == v.values

    def test_equal_weights(self):
        out = fuse_features([FeatureVector(C, (1, 0)), FeatureVector(L, (0, 1))], [0.5, 0.5])
        assert out.values == (0.5, 0.5)

    def test_proportional_weights(self):
        out = fuse_features([FeatureVector(C, (7, 0)), FeatureVector(L, (0, 7))],
                            {C: 4 / 7, L: 3 / 7})
        assert out.values == pytest.approx((4, 3))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            fuse_features([FeatureVector(C, (1, 0)), FeatureVector(L, (1,))], [0.5, 0.5])

    def test_stub_perception_shape(self):
        feats = StubPerception(dim=5).features(canonical_table3_trace()[0])
        assert [f.modality for f in feats] == [C, L, R]
        assert {f.dim for f in feats} == {5}
