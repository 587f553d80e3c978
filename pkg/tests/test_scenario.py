import pytest

from edgestream.errors import ScenarioError
from edgestream.media import R1080
from edgestream.scenario import KEYS, load_scenario, loads, override, parse_text


def test_builtin_default_settings():
    sc = load_scenario("paper-default")
    assert sc.name == "paper-default"
    assert sc.run_length == 60 and sc.epoch_length == 1.0 and sc.n_epochs == 60
    assert sc.limits.max_bitrate == 20e6
    assert (sc.primary.fps, sc.primary.resolution) == (30, R1080)
    assert (sc.fixed.target_bitrate, sc.fixed.fps, sc.fixed.resolution) == (20e6, 30, R1080)


def test_builtin_default_profile_shape():
    segs = load_scenario("paper-default").schedule.segments
    starts = [t for t, _ in segs]
    assert starts == [0, 10, 20, 30, 40, 50]
    caps = [c for _, c in segs]
    assert sum(1 for c in caps if c < 5e6) == 1
    lowest_tier = min(c for c in caps if c > 5e6)
    assert 5e6 < lowest_tier < 20e6
    assert sum(10 for c in caps if c == lowest_tier) >= 20
    assert caps[0] > 20e6


def test_defaults_fill_missing_keys():
    sc = loads('name = "x"')
    assert sc.predictor.gamma == 0.9 and sc.predictor.order == 4 and sc.worker_count == 3


def test_unknown_key_reports_line():
    with pytest.raises(ScenarioError) as exc:
        loads('name = "x"\n\nlink.bogus = 3\n')
    assert exc.value.line == 3 and exc.value.key == "link.bogus"
    assert "line 3" in str(exc.value)


def test_duplicate_key_rejected():
    with pytest.raises(ScenarioError) as exc:
        loads("seed = 1\nseed = 2\n")
    assert exc.value.line == 2


def test_decreasing_schedule_is_a_validation_error():
    with pytest.raises(ScenarioError) as exc:
        loads("link.schedule = [[0, 10e6], [5, 5e6], [3, 1e6]]")
    assert exc.value.key == "link.schedule" and exc.value.line == 1


@pytest.mark.parametrize("text,key", [
    ("run_length = -1", "run_length"),
    ("primary.bitrate = 0", "primary.bitrate"),
    ('primary.resolution = "640x360"', "primary.resolution"),
    ("predictor.gamma = 1.5", "predictor.gamma"),
    ("seed = 1.5", "seed"),
    ("adaptation_enabled = 1", "adaptation_enabled"),
    ("link.queue_limit = 100", "link.queue_limit"),
])
def test_invalid_values_point_at_key(text, key):
    with pytest.raises(ScenarioError) as exc:
        loads(text)
    assert exc.value.key == key


def test_comments_and_blank_lines():
    assert parse_text("# hi\n\n  seed = 4  \n")["seed"] == 4


def test_bad_syntax():
    with pytest.raises(ScenarioError):
        loads("seed 4")
    with pytest.raises(ScenarioError):
        loads("seed = [1,")


def test_override_and_without_adaptation():
    sc = load_scenario("paper-default")
    assert override(sc, seed=7).seed == 7
    off = sc.without_adaptation()
    assert not off.adaptation_enabled and off.schedule == sc.schedule and off.seed == sc.seed


def test_missing_file():
    with pytest.raises(ScenarioError, match="cannot read"):
        load_scenario("/nonexistent/x.scn")


def test_every_key_has_a_default_that_builds():
    assert loads("").values == {}
    assert len(KEYS) > 40
