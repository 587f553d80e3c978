"""Media packet framing, frame reassembly and the feedback wire format.

Both formats are little-endian with fixed 20-byte headers::

    MediaPacket     <BBIHHQH  stream_id, flags, frame_seq, fragment_index,
                              fragment_count, capture_time_us, payload_len
                              followed by payload_len payload bytes
    FeedbackMessage <IQQ      epoch_index, estimate_bps, server_time_us
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError, FramingError, ProtocolError
from .media import FrameDescriptor

HEADER = struct.Struct("<BBIHHQH")
HEADER_SIZE = HEADER.size
FEEDBACK = struct.Struct("<IQQ")
FEEDBACK_SIZE = FEEDBACK.size

FLAG_KEYFRAME = 0x01
FLAG_LAST_FRAGMENT = 0x02

DEFAULT_MTU = 1220
EXPIRY_TIMEOUT = 0.5

assert HEADER_SIZE == 20 and FEEDBACK_SIZE == 20


@dataclass(frozen=True)
class MediaPacket:
    stream_id: int
    flags: int
    frame_seq: int
    fragment_index: int
    fragment_count: int
    capture_time_us: int
    payload_len: int
    payload: bytes = b""

    @property
    def is_keyframe(self) -> bool:
        return bool(self.flags & FLAG_KEYFRAME)

    @property
    def is_last(self) -> bool:
        return bool(self.flags & FLAG_LAST_FRAGMENT)

    @property
    def wire_size(self) -> int:
        return HEADER_SIZE + self.payload_len

    def encode(self) -> bytes:
        payload = self.payload if self.payload else bytes(self.payload_len)
        if len(payload) != self.payload_len:
            raise FramingError(f"payload is {len(payload)} bytes, header says {self.payload_len}")
        return HEADER.pack(
            self.stream_id, self.flags, self.frame_seq, self.fragment_index,
            self.fragment_count, self.capture_time_us, self.payload_len,
        ) + payload

    @classmethod
    def decode(cls, buf: bytes) -> "MediaPacket":
        if len(buf) < HEADER_SIZE:
            raise FramingError(f"media packet needs {HEADER_SIZE} header bytes, got {len(buf)}")
        fields = HEADER.unpack_from(buf)
        payload_len = fields[-1]
        payload = bytes(buf[HEADER_SIZE:HEADER_SIZE + payload_len])
        if len(payload) < payload_len:
            raise FramingError(f"truncated payload: {len(payload)} of {payload_len} bytes")
        packet = cls(*fields, payload=payload)
        if packet.fragment_index >= packet.fragment_count:
            raise FramingError(
                f"fragment_index {packet.fragment_index} >= fragment_count {packet.fragment_count}")
        return packet


@dataclass(frozen=True)
class FeedbackMessage:
    epoch_index: int
    estimate_bps: int
    server_time_us: int

    def encode(self) -> bytes:
        if self.estimate_bps < 0:
            raise FramingError("estimate_bps must be >= 0")
        return FEEDBACK.pack(self.epoch_index, self.estimate_bps, self.server_time_us)

    @classmethod
    def decode(cls, buf: bytes) -> "FeedbackMessage":
        if len(buf) < FEEDBACK_SIZE:
            raise FramingError(f"feedback message needs {FEEDBACK_SIZE} bytes, got {len(buf)}")
        return cls(*FEEDBACK.unpack_from(buf))


def payload_size(mtu: int) -> int:
    if mtu <= HEADER_SIZE:
        raise ConfigError(f"mtu {mtu} must exceed the {HEADER_SIZE}-byte header")
    return mtu - HEADER_SIZE


def fragment_count(size: int, mtu: int) -> int:
    return math.ceil(size / payload_size(mtu))


def packetize(frame: FrameDescriptor, mtu: int = DEFAULT_MTU, with_payload: bool = False) -> list[MediaPacket]:
    """Split ``frame`` into MTU-sized packets.

    Payloads are synthetic zeros. With ``with_payload=False`` only
    ``payload_len`` is set, which is all the simulator needs; ``encode``
    zero-fills on the way out.
    """
    chunk = payload_size(mtu)
    if frame.size <= 0:
        raise ConfigError(f"frame size must be positive, got {frame.size}")
    count = math.ceil(frame.size / chunk)
    if count > 0xFFFF:
        raise ConfigError(f"frame of {frame.size} bytes needs {count} fragments (max 65535)")
    base = FLAG_KEYFRAME if frame.is_keyframe else 0
    capture_us = round(frame.capture_time * 1e6)
    packets = []
    for i in range(count):
        n = min(chunk, frame.size - i * chunk)
        flags = base | (FLAG_LAST_FRAGMENT if i == count - 1 else 0)
        packets.append(MediaPacket(
            frame.stream_id, flags, frame.frame_seq, i, count, capture_us, n,
            bytes(n) if with_payload else b"",
        ))
    return packets


@dataclass(frozen=True)
class FrameArrival:
    stream_id: int
    frame_seq: int
    capture_time: float
    completion_time: float
    size: int
    is_keyframe: bool


@dataclass
class _Partial:
    fragment_count: int
    capture_time_us: int
    first_arrival: float
    received: dict = field(default_factory=dict)
    keyframe: bool = False


class Reassembler:
    """Per-receiver fragment collector.

    Emits a :class:`FrameArrival` exactly once per frame, when the last
    missing fragment shows up. Frames still incomplete ``timeout`` seconds
    after their first fragment are expired by :meth:`expire`.
    """

    def __init__(self, timeout: float = EXPIRY_TIMEOUT):
        self.timeout = timeout
        self._partial: dict[tuple[int, int], _Partial] = {}
        self._done: set[tuple[int, int]] = set()
        self.duplicates = 0
        self.late = 0

    def __len__(self):
        return len(self._partial)

    def push(self, packet: MediaPacket, arrival_time: float) -> Optional[FrameArrival]:
        key = (packet.stream_id, packet.frame_seq)
        if key in self._done:
            self.late += 1
            return None
        state = self._partial.get(key)
        if state is None:
            state = self._partial[key] = _Partial(packet.fragment_count, packet.capture_time_us, arrival_time)
        elif state.fragment_count != packet.fragment_count:
            raise ProtocolError(
                f"stream {packet.stream_id} frame {packet.frame_seq}: fragment_count "
                f"{packet.fragment_count} != {state.fragment_count}")
        if packet.fragment_index in state.received:
            self.duplicates += 1
            return None
        state.received[packet.fragment_index] = packet.payload_len
        state.keyframe = state.keyframe or packet.is_keyframe
        if len(state.received) < state.fragment_count:
            return None
        del self._partial[key]
        self._done.add(key)
        return FrameArrival(
            stream_id=packet.stream_id,
            frame_seq=packet.frame_seq,
            capture_time=state.capture_time_us / 1e6,
            completion_time=arrival_time,
            size=sum(state.received.values()),
            is_keyframe=state.keyframe,
        )

    def expire(self, now: float) -> list[tuple[int, int]]:
        """Drop and return ``(stream_id, frame_seq)`` of frames past the timeout."""
        stale = [k for k, s in self._partial.items() if now - s.first_arrival >= self.timeout]
        for key in stale:
            del self._partial[key]
            self._done.add(key)
        return stale
