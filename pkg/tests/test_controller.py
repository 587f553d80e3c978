import itertools
import math

import pytest
from hypothesis import given, settings, strategies as st

from edgestream.controller import (
    AdaptationDecision, Controller, Limits, NlmsFilter, Predictor, PredictorConfig, ResolutionLadder, decide,
    run_predictor, secondary_next,
)
from edgestream.errors import ConfigError
from edgestream.media import R480, R720, R1080
from edgestream.transport import FeedbackMessage

LADDER = ResolutionLadder()
LIMITS = Limits()


def fb(k, bps):
    return FeedbackMessage(k, round(bps), 0)


def test_history_appends_and_ignores_duplicates():
    p = Predictor()
    for k in range(3):
        p.ingest(fb(k, 10e6))
    assert p.ingest(fb(3, 10e6))
    assert [h.estimate_bps for h in p.history] == [10e6] * 4
    before = (list(p.history), list(p.filter.inputs), p.predict())
    assert not p.ingest(fb(3, 99e6))
    assert not p.ingest(fb(1, 99e6))
    assert (list(p.history), list(p.filter.inputs), p.predict()) == before
    assert p.stale_messages == 2


def test_no_data_is_missing_and_holds_filter_input():
    p = Predictor()
    p.ingest(fb(0, 10e6))
    p.ingest(fb(1, 0))
    assert p.history[-1].missing
    assert list(p.filter.inputs) == [10e6, 10e6]


def test_initial_rate_before_any_estimate():
    assert Predictor(PredictorConfig(initial_rate=7e6)).predict() == 7e6


def test_cold_start_passthrough():
    assert run_predictor([10e6])[0] == pytest.approx(9e6)


def test_constant_input_converges_to_gamma_times_value():
    assert run_predictor([10e6] * 30)[-1] == pytest.approx(9e6, rel=0.01)


def test_step_down_tracked_within_two_epochs():
    preds = run_predictor([20e6] * 15 + [6e6] * 3)
    assert any(abs(p - 0.9 * 6e6) <= 0.1 * 0.9 * 6e6 for p in preds[15:17])


def test_floor():
    assert run_predictor([1e3] * 5)[-1] == pytest.approx(0.9 * 100e3)


def test_nlms_converges_on_varied_constant_level():
    f = NlmsFilter(4, 0.5)
    f.weights = [0.1, 0.2, 0.3, 0.1]
    for _ in range(200):
        f.update(5.0)
    assert f.output() == pytest.approx(5.0, rel=1e-3)
    assert all(math.isfinite(w) for w in f.weights)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1e5, 1e8), min_size=1, max_size=40))
def test_prediction_bounded_by_recent_inputs(xs):
    p = Predictor()
    for k, x in enumerate(xs):
        p.ingest(fb(k, x))
        recent = [round(v) for v in xs[max(0, k - 3):k + 1]]
        assert 0.9 * max(1e5, min(recent)) - 1 <= p.predict() <= 0.9 * max(recent) + 1


def test_silence_decays_prediction():
    p = Predictor()
    p.ingest(fb(0, 10e6))
    base = p.predict()
    p.tick()
    p.tick()
    assert p.predict() == base
    p.tick()
    assert p.predict() == pytest.approx(base * 0.8)
    p.tick()
    assert p.predict() == pytest.approx(base * 0.64)
    p.ingest(fb(1, 10e6))
    assert p.predict() == pytest.approx(base)


class TestSaturation:
    def test_estimate_below_sent_is_a_capacity_measurement(self):
        p = Predictor()
        p.record_sent(2_500_000, 0.5)  # 20 Mbps offered
        p.ingest(fb(0, 12e6))
        assert p.history[-1].saturated and p.history[-1].sample_bps == 12e6

    def test_matching_estimate_probes_upward(self):
        p = Predictor()
        p.record_sent(1_250_000, 0.5)
        p.ingest(fb(0, 10e6))
        h = p.history[-1]
        assert h.saturated is False and h.sample_bps > 10e6 / 0.9
        assert 10e6 < p.predict() < 10.5e6

    def test_backlog_is_drained_from_the_next_prediction(self):
        p = Predictor()
        p.record_sent(2_500_000, 0.5)  # 20 Mbit sent, 12 received: 8 Mbit queued
        p.ingest(fb(0, 12e6))
        assert p.backlog_bits == pytest.approx(8e6)
        assert p.predict() == pytest.approx(0.9 * 12e6 - (8e6 - 0.05 * 0.9 * 12e6))


def test_config_validation():
    with pytest.raises(ConfigError):
        PredictorConfig(order=5, window=4).validate()
    with pytest.raises(ConfigError):
        PredictorConfig(gamma=0).validate()
    with pytest.raises(ConfigError):
        ResolutionLadder(((0.0, R480), (5e6, R1080), (5e6, R720))).validate()
    with pytest.raises(ConfigError):
        ResolutionLadder(((0.0, R480), (5e6, R720))).validate()


def test_decide_examples():
    d = decide(25e6, LADDER, LIMITS, None)
    assert (d.encoder_bitrate, d.resolution, d.secondary_active) == (20e6, R1080, False)
    d = decide(12e6, LADDER, LIMITS, None)
    assert (d.encoder_bitrate, d.resolution, d.secondary_active) == (12e6, R1080, False)
    d = decide(4e6, LADDER, LIMITS, None)
    assert d.secondary_active and d.resolution == R480
    assert d.secondary_bitrate == 1.5e6 and d.primary_bitrate == pytest.approx(2.5e6)


@settings(max_examples=300, deadline=None)
@given(pred=st.floats(1e3, 1e8), prev_active=st.booleans(), prev_res=st.sampled_from([None, R480, R720, R1080]))
def test_decision_invariants(pred, prev_active, prev_res):
    prev = None if prev_res is None else AdaptationDecision(0, 0, 0, 0, 0, prev_res, prev_active)
    d = decide(pred, LADDER, LIMITS, prev)
    assert d.encoder_bitrate == min(pred, 20e6)
    assert 0 < d.encoder_bitrate <= 20e6
    assert d.primary_bitrate + d.secondary_bitrate <= pred * (1 + 1e-12)
    assert d.primary_bitrate > 0
    if d.secondary_active:
        assert d.resolution == R480


@settings(max_examples=200, deadline=None)
@given(a=st.floats(0, 3e7), b=st.floats(0, 3e7), current=st.sampled_from([None, 0, 1, 2]))
def test_ladder_monotone(a, b, current):
    lo, hi = sorted((a, b))
    assert LADDER.select(lo, current) <= LADDER.select(hi, current)


@pytest.mark.parametrize("threshold", [5e6, 10e6])
def test_hysteresis_single_change_under_one_percent_oscillation(threshold):
    prev = decide(threshold * 1.2, LADDER, LIMITS, None)
    changes = 0
    for k in range(40):
        pred = threshold * (0.99 if k % 2 == 0 else 1.01)
        d = decide(pred, LADDER, LIMITS, prev)
        changes += d.resolution != prev.resolution
        prev = d
    assert changes <= 1


def test_secondary_grid_exhaustive():
    grid = [x * 1e5 for x in range(0, 121)]
    for pred, active in itertools.product(grid, (False, True)):
        bound = 5e6 * (1.1 if active else 1.0)
        assert secondary_next(pred, active, 5e6, 0.1) == (pred < bound)
        if pred > 0:
            prev = AdaptationDecision(0, 0, 0, 0, 0, R480, active)
            assert decide(pred, LADDER, LIMITS, prev).secondary_active == (pred < bound)


def test_controller_step_uses_prediction():
    c = Controller(Predictor())
    c.on_feedback(fb(0, 30e6))
    d = c.step(0)
    assert d.predicted_bps == pytest.approx(27e6) and d.encoder_bitrate == 20e6
