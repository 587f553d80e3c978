"""Single-bottleneck uplink emulator.

The uplink is a FIFO, tail-drop byte queue drained by a piecewise-constant
capacity schedule. Because service is FIFO and work-conserving, a packet's
departure time is fixed the moment it is accepted: service starts at
``max(arrival, previous departure)`` and ends once its bits have been
integrated against the schedule. :meth:`Link.offer` therefore computes the
whole timeline up front and :meth:`Link.advance` releases deliveries in
order.
"""

from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Sequence

from .errors import ConfigError

INFINITE = math.inf


class CapacitySchedule:
    """Piecewise-constant capacity in bits/second.

    ``segments`` is a sequence of ``(start_time, capacity)``; the first
    start must be 0 and the last segment extends forever. A segment owns
    its start instant.
    """

    def __init__(self, segments: Iterable[Sequence[float]]):
        segs = [(float(t), float(c)) for t, c in segments]
        if not segs:
            raise ConfigError("capacity schedule is empty")
        if segs[0][0] != 0:
            raise ConfigError(f"capacity schedule must start at 0, starts at {segs[0][0]}")
        for (t0, _), (t1, _) in zip(segs, segs[1:]):
            if not t1 > t0:
                raise ConfigError(f"capacity schedule start times must increase ({t0} then {t1})")
        for t, c in segs:
            if not c > 0:
                raise ConfigError(f"capacity at t={t} must be positive, got {c}")
        self.segments = segs
        self._starts = [t for t, _ in segs]

    @classmethod
    def constant(cls, capacity: float) -> "CapacitySchedule":
        return cls([(0.0, capacity)])

    def __repr__(self):
        return f"CapacitySchedule({self.segments!r})"

    def __eq__(self, other):
        return isinstance(other, CapacitySchedule) and self.segments == other.segments

    def _index(self, t: float) -> int:
        return bisect.bisect_right(self._starts, t) - 1

    def capacity_at(self, t: float) -> float:
        if t < 0:
            raise ValueError(f"t must be >= 0, got {t}")
        return self.segments[self._index(t)][1]

    def max_over(self, t0: float, t1: float) -> float:
        """Largest capacity in effect anywhere in ``[t0, t1)``."""
        lo, hi = self._index(t0), self._index(max(t0, t1 - 1e-12))
        return max(c for _, c in self.segments[lo:hi + 1])

    def finish_time(self, start: float, bits: float) -> float:
        """Time at which ``bits`` finish draining when service begins at ``start``."""
        i = self._index(start)
        t = start
        remaining = float(bits)
        while True:
            cap = self.segments[i][1]
            end = self.segments[i + 1][0] if i + 1 < len(self.segments) else INFINITE
            need = remaining / cap
            if t + need <= end:
                return t + need
            remaining -= (end - t) * cap
            t = end
            i += 1


def capacity_at(schedule: CapacitySchedule, t: float) -> float:
    return schedule.capacity_at(t)


@dataclass(frozen=True)
class LinkParams:
    prop_delay_up: float = 0.010
    prop_delay_down: float = 0.010
    queue_limit: int = 2_000_000
    downlink_capacity: float = 50e6

    def validate(self, mtu: int = 1220) -> "LinkParams":
        if self.prop_delay_up < 0 or self.prop_delay_down < 0:
            raise ConfigError("propagation delays must be >= 0")
        if self.queue_limit <= mtu:
            raise ConfigError(f"queue_limit {self.queue_limit} must exceed the MTU {mtu}")
        if not self.downlink_capacity > 0:
            raise ConfigError("downlink_capacity must be positive")
        return self


class EventKind(Enum):
    DELIVERED = "delivered"
    DROPPED = "dropped"


@dataclass(frozen=True)
class LinkEvent:
    kind: EventKind
    packet: Any
    size: int
    enqueue_time: float
    depart_time: float = math.nan
    deliver_time: float = math.nan


class Link:
    """Uplink bottleneck. Owned by a single simulation loop."""

    def __init__(self, schedule: CapacitySchedule, params: LinkParams = LinkParams()):
        self.schedule = schedule
        self.params = params
        self.clock = 0.0
        self.queued_bytes = 0
        self._busy_until = 0.0
        self._in_queue: deque[tuple[float, int]] = deque()
        self._in_flight: deque[LinkEvent] = deque()
        self.offered = 0
        self.delivered = 0
        self.dropped = 0

    def _tick(self, t: float) -> None:
        if t < self.clock:
            raise RuntimeError(f"link clock went backwards: {t} < {self.clock}")
        self.clock = t
        q = self._in_queue
        while q and q[0][0] <= t:
            self.queued_bytes -= q.popleft()[1]
        assert self.queued_bytes >= 0

    def offer(self, packet: Any, size: int, t: float) -> LinkEvent:
        """Enqueue ``size`` on-wire bytes at time ``t``.

        Returns the packet's event: ``DROPPED`` immediately, or ``DELIVERED``
        with its (future) departure and delivery times. Delivered events are
        also released by :meth:`advance` once the clock reaches them.
        """
        self._tick(t)
        self.offered += 1
        if self.queued_bytes + size > self.params.queue_limit:
            self.dropped += 1
            return LinkEvent(EventKind.DROPPED, packet, size, t)
        start = max(t, self._busy_until)
        depart = self.schedule.finish_time(start, 8 * size)
        self._busy_until = depart
        self.queued_bytes += size
        self._in_queue.append((depart, size))
        event = LinkEvent(EventKind.DELIVERED, packet, size, t, depart, depart + self.params.prop_delay_up)
        self._in_flight.append(event)
        return event

    def advance(self, to_time: float) -> list[LinkEvent]:
        """Release deliveries with ``deliver_time <= to_time``, in FIFO order."""
        self._tick(to_time)
        out = []
        flight = self._in_flight
        while flight and flight[0].deliver_time <= to_time:
            out.append(flight.popleft())
        self.delivered += len(out)
        return out

    def next_delivery(self) -> float:
        return self._in_flight[0].deliver_time if self._in_flight else INFINITE

    @property
    def in_flight(self) -> int:
        return len(self._in_flight)

    def send_feedback(self, t: float, size: int = 20) -> float:
        """Delivery time of a downlink message sent at ``t``. Downlink is uncongested."""
        cap = self.params.downlink_capacity
        serialization = 0.0 if math.isinf(cap) else 8 * size / cap
        return t + serialization + self.params.prop_delay_down
