import hashlib

import pytest

from edgestream.netem import CapacitySchedule
from edgestream.scenario import load_scenario
from edgestream.sim import DELIVER, EPOCH, FEEDBACK, DECIDE, SEND, Simulation, run_sim
from helpers import constant


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_event_order_constants():
    assert DELIVER < EPOCH < FEEDBACK < DECIDE < SEND


def test_ample_capacity_pins_encoder_at_cap():
    r = run_sim(constant(30e6))
    assert r.summary.violation_fraction == 0.0
    assert r.summary.loss_fraction == 0.0
    warm = [e for e in r.epochs if e.epoch_index >= 2]
    assert all(e.encoder_bitrate == 20e6 for e in warm)


def test_fixed_20m_into_6m_saturates():
    r = run_sim(constant(6e6, run_length=30).without_adaptation())
    assert r.summary.violation_fraction > 0.3
    assert r.summary.loss_fraction > 0
    assert r.link_stats["dropped"] > 0


def test_no_adaptation_uses_fixed_encoder():
    r = run_sim(constant(30e6, run_length=5).without_adaptation())
    assert r.decisions == []
    assert {e.encoder_bitrate for e in r.epochs} == {20e6}


def test_same_scenario_twice_identical_files(tmp_path):
    sc = constant(12e6, run_length=10, seed=5)
    run_sim(sc, tmp_path / "a")
    run_sim(sc, tmp_path / "b")
    for name in ("frames.csv", "epochs.csv", "summary.json"):
        assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name)


def test_sixty_second_run_has_1800_primary_rows(tmp_path):
    r = run_sim(constant(30e6, run_length=60), tmp_path)
    rows = (tmp_path / "frames.csv").read_text().splitlines()
    assert len([x for x in rows[1:] if x.startswith("0,")]) == 1800
    assert len((tmp_path / "epochs.csv").read_text().splitlines()) == 61
    assert r.summary.frames_total == 1800


def test_epoch_trace_columns_filled():
    r = run_sim(load_scenario("paper-default").with_values(run_length=12))
    for e in r.epochs:
        assert e.estimate_bps is not None and e.predicted_bps is not None and e.encoder_bitrate is not None
        assert e.max_capacity_bps == r.scenario.schedule.capacity_at(e.start_time)


def test_secondary_stream_activates_below_threshold():
    r = run_sim(constant(4e6, run_length=15))
    active = [e for e in r.epochs if e.secondary_active]
    assert active and all(e.resolution == "854x480" for e in active)
    secondary = [f for f in r.records if f.stream_id == 1]
    assert secondary and all(f.resolution == "1920x1080" for f in secondary)
    assert r.summary.jobs.get("detection.stream1", 0) == 0
    assert r.summary.jobs.get("navigation.stream1", 0) > 0


def test_initialization_order_does_not_matter():
    sc = load_scenario("paper-default").with_values(run_length=8)
    a = Simulation(sc).run().summary.to_dict()
    sim = Simulation(sc)
    sim.epochs.reverse()
    sim.epochs.reverse()
    assert sim.run().summary.to_dict() == a
