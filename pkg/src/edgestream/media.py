"""Synthetic camera + encoder model.

Frame sizes follow a rate-accurate GoP model: one keyframe of
``i_frame_ratio`` times the size of a delta frame, followed by
``gop_length - 1`` delta frames, such that the GoP average equals
``target_bitrate / (8 * fps)`` bytes.
"""

from __future__ import annotations

import dataclasses
import math
import random
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

from .errors import ConfigError

if TYPE_CHECKING:
    from .controller import AdaptationDecision

PRIMARY = 0
SECONDARY = 1


@dataclass(frozen=True, order=True)
class Resolution:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 16 or self.height < 16:
            raise ConfigError(f"resolution {self.width}x{self.height} below 16x16")

    @classmethod
    def parse(cls, text: str) -> "Resolution":
        try:
            w, h = text.lower().split("x")
            return cls(int(w), int(h))
        except ValueError:
            raise ConfigError(f"bad resolution {text!r}, expected WIDTHxHEIGHT") from None

    @property
    def pixels(self) -> int:
        return self.width * self.height

    def __str__(self):
        return f"{self.width}x{self.height}"


R1080 = Resolution(1920, 1080)
R720 = Resolution(1280, 720)
R480 = Resolution(854, 480)


@dataclass(frozen=True)
class StreamConfig:
    stream_id: int = PRIMARY
    fps: float = 30.0
    resolution: Resolution = R1080
    target_bitrate: float = 20e6
    gop_length: int = 30
    i_frame_ratio: float = 4.0
    size_jitter: float = 0.0
    start_offset: float = 0.0

    def validate(self) -> "StreamConfig":
        if not self.target_bitrate > 0:
            raise ConfigError(f"target_bitrate must be positive, got {self.target_bitrate}")
        if not self.fps > 0:
            raise ConfigError(f"fps must be positive, got {self.fps}")
        if self.gop_length < 1:
            raise ConfigError(f"gop_length must be >= 1, got {self.gop_length}")
        if not self.i_frame_ratio > 1:
            raise ConfigError(f"i_frame_ratio must be > 1, got {self.i_frame_ratio}")
        if not 0 <= self.size_jitter < 1:
            raise ConfigError(f"size_jitter must be in [0, 1), got {self.size_jitter}")
        if self.start_offset < 0:
            raise ConfigError("start_offset must be >= 0")
        return self

    @property
    def frame_interval(self) -> float:
        return 1.0 / self.fps


@dataclass(frozen=True)
class FrameDescriptor:
    stream_id: int
    frame_seq: int
    capture_time: float
    resolution: Resolution
    size: int
    is_keyframe: bool


def gop_sizes(config: StreamConfig) -> tuple[int, int]:
    """Return ``(keyframe_size, delta_size)`` in bytes for zero jitter."""
    mean = config.target_bitrate / (8.0 * config.fps)
    if config.gop_length == 1:
        size = max(1, math.floor(mean))
        return size, size
    delta = config.gop_length * mean / (config.i_frame_ratio + config.gop_length - 1)
    return max(1, math.floor(config.i_frame_ratio * delta)), max(1, math.floor(delta))


def capture_time(config: StreamConfig, frame_seq: int) -> float:
    return config.start_offset + frame_seq / config.fps


def next_frame(config: StreamConfig, frame_seq: int, rng: Optional[random.Random] = None) -> FrameDescriptor:
    config.validate()
    if frame_seq < 0:
        raise ConfigError(f"frame_seq must be >= 0, got {frame_seq}")
    key_size, delta_size = gop_sizes(config)
    is_key = frame_seq % config.gop_length == 0
    size = key_size if is_key else delta_size
    if config.size_jitter > 0:
        if rng is None:
            raise ConfigError("size_jitter > 0 requires an rng")
        scale = rng.uniform(1.0 - config.size_jitter, 1.0 + config.size_jitter)
        size = max(1, math.floor(size * scale))
    return FrameDescriptor(
        stream_id=config.stream_id,
        frame_seq=frame_seq,
        capture_time=capture_time(config, frame_seq),
        resolution=config.resolution,
        size=size,
        is_keyframe=is_key,
    )


def apply_decision(config: StreamConfig, decision: "AdaptationDecision") -> StreamConfig:
    """Substitute the decision's primary bitrate and resolution into ``config``.

    Timing (next frame for bitrate, next GoP for resolution) is handled by
    :class:`Encoder`; this is plain field substitution.
    """
    if decision.primary_bitrate == config.target_bitrate and decision.resolution == config.resolution:
        return config
    return dataclasses.replace(config, target_bitrate=decision.primary_bitrate, resolution=decision.resolution)


class Encoder:
    """Stateful frame source for one stream.

    Bitrate updates land on the next frame. Resolution updates wait for the
    next keyframe so a GoP never mixes resolutions.
    """

    def __init__(self, config: StreamConfig, rng: Optional[random.Random] = None):
        self.config = config.validate()
        self.rng = rng if rng is not None else random.Random(0)
        self.frame_seq = 0
        self._pending: Optional[StreamConfig] = None

    def update(self, config: StreamConfig) -> None:
        config.validate()
        if config.resolution == self.config.resolution:
            self.config = config
            self._pending = None
        else:
            self.config = dataclasses.replace(config, resolution=self.config.resolution)
            self._pending = config

    @property
    def next_capture_time(self) -> float:
        return capture_time(self.config, self.frame_seq)

    def next(self) -> FrameDescriptor:
        if self._pending is not None and self.frame_seq % self.config.gop_length == 0:
            self.config = self._pending
            self._pending = None
        frame = next_frame(self.config, self.frame_seq, self.rng)
        self.frame_seq += 1
        return frame
