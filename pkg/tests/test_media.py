import dataclasses
import random

import pytest
from hypothesis import given, settings, strategies as st

from edgestream.controller import AdaptationDecision
from edgestream.errors import ConfigError
from edgestream.media import (
    PRIMARY, R480, R720, R1080, Encoder, Resolution, StreamConfig, apply_decision, capture_time, gop_sizes,
    next_frame,
)


def test_gop_one_every_frame_is_the_mean():
    cfg = StreamConfig(target_bitrate=20e6, fps=30, gop_length=1)
    sizes = {next_frame(cfg, i).size for i in range(60)}
    assert sizes == {83_333}


def test_gop_30_ratio_4_split():
    key, delta = gop_sizes(StreamConfig(target_bitrate=20e6, fps=30, gop_length=30, i_frame_ratio=4))
    assert delta == 75_757
    assert key == 303_030


def test_capture_time_from_sequence():
    assert capture_time(StreamConfig(fps=30), 45) == pytest.approx(1.5)


def test_keyframe_cadence_and_sequence():
    cfg = StreamConfig(gop_length=10)
    frames = [next_frame(cfg, i) for i in range(35)]
    assert [f.frame_seq for f in frames if f.is_keyframe] == [0, 10, 20, 30]
    assert all(f.size > 0 for f in frames)


@pytest.mark.parametrize("bad", [
    dict(target_bitrate=0), dict(fps=0), dict(gop_length=0), dict(i_frame_ratio=1.0), dict(size_jitter=1.0),
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        StreamConfig(**bad).validate()


def test_resolution_bounds_and_parse():
    assert Resolution.parse("1280x720") == R720
    with pytest.raises(ConfigError):
        Resolution(8, 720)
    with pytest.raises(ConfigError):
        Resolution.parse("wide")


@settings(max_examples=60, deadline=None)
@given(
    bitrate=st.floats(2e5, 5e7),
    fps=st.sampled_from([1.0, 15.0, 24.0, 30.0, 60.0]),
    gop=st.integers(1, 60),
    ratio=st.floats(1.01, 8.0),
)
def test_whole_gop_realizes_target_bitrate(bitrate, fps, gop, ratio):
    cfg = StreamConfig(target_bitrate=bitrate, fps=fps, gop_length=gop, i_frame_ratio=ratio)
    total = sum(next_frame(cfg, i).size for i in range(gop))
    assert abs(total - bitrate * gop / (8 * fps)) <= gop + 1


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), jitter=st.floats(0.0, 0.5))
def test_same_seed_same_frames(seed, jitter):
    cfg = StreamConfig(size_jitter=jitter)
    a = Encoder(cfg, random.Random(seed))
    b = Encoder(cfg, random.Random(seed))
    assert [a.next() for _ in range(50)] == [b.next() for _ in range(50)]


def test_jitter_stays_in_band():
    cfg = StreamConfig(gop_length=1, size_jitter=0.2)
    rng = random.Random(3)
    for i in range(200):
        assert 0.8 * 83_333 - 1 <= next_frame(cfg, i, rng).size <= 1.2 * 83_333 + 1


def _decision(bitrate, resolution, secondary=False):
    return AdaptationDecision(0, bitrate, bitrate, bitrate, 0.0, resolution, secondary)


def test_apply_decision_substitutes_fields():
    cfg = StreamConfig(target_bitrate=20e6, resolution=R1080)
    new = apply_decision(cfg, _decision(10e6, R720))
    assert (new.target_bitrate, new.resolution) == (10e6, R720)
    assert apply_decision(new, _decision(10e6, R720)) == new


def test_secondary_decision_only_touches_primary():
    cfg = StreamConfig(stream_id=PRIMARY)
    d = AdaptationDecision(0, 4e6, 4e6, 2.5e6, 1.5e6, R480, True)
    new = apply_decision(cfg, d)
    assert new.stream_id == PRIMARY and new.target_bitrate == 2.5e6 and new.resolution == R480


def test_encoder_defers_resolution_to_keyframe():
    enc = Encoder(StreamConfig(gop_length=5))
    enc.next()
    enc.update(dataclasses.replace(enc.config, target_bitrate=5e6, resolution=R720))
    mid = [enc.next() for _ in range(4)]
    assert all(f.resolution == R1080 for f in mid)
    assert mid[0].size < 83_333 / 2  # bitrate applied at once
    nxt = enc.next()
    assert nxt.is_keyframe and nxt.resolution == R720
