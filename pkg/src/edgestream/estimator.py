"""Server-side link-rate measurement.

The estimate for an epoch is the on-wire throughput (headers included)
received during it: ``8 * bytes_received / epoch_length``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .errors import AccountingError
from .transport import FeedbackMessage

# absorbs float noise when an arrival lands exactly on an epoch boundary
_BOUNDARY_EPS = 1e-9


@dataclass(frozen=True)
class RateEstimate:
    epoch_index: int
    estimate_bps: float
    bytes_received: int
    packets: int
    no_data: bool
    first_arrival: Optional[float] = None
    last_arrival: Optional[float] = None

    def to_feedback(self, server_time: float) -> FeedbackMessage:
        return FeedbackMessage(self.epoch_index, round(self.estimate_bps), round(server_time * 1e6))


class Estimator:
    """Per-epoch byte accumulator.

    Arrivals may be observed before the epoch they belong to is current
    (e.g. a packet landing exactly on a boundary while the previous epoch
    awaits finalization); those are parked until their epoch comes up.
    """

    def __init__(self, epoch_length: float = 1.0, start_time: float = 0.0):
        if not epoch_length > 0:
            raise ValueError("epoch_length must be positive")
        self.epoch_length = epoch_length
        self.start_time = start_time
        self.current_epoch_index = 0
        self._buckets: dict[int, list] = {}
        self.total_bytes = 0

    def epoch_of(self, t: float) -> int:
        return math.floor((t - self.start_time) / self.epoch_length + _BOUNDARY_EPS)

    def epoch_start(self, index: int) -> float:
        return self.start_time + index * self.epoch_length

    def observe(self, packet_bytes: int, arrival_time: float) -> None:
        index = self.epoch_of(arrival_time)
        if index < self.current_epoch_index:
            raise AccountingError(
                f"arrival at t={arrival_time} belongs to finalized epoch {index} "
                f"(current epoch {self.current_epoch_index})")
        bucket = self._buckets.get(index)
        if bucket is None:
            self._buckets[index] = [packet_bytes, 1, arrival_time, arrival_time]
        else:
            bucket[0] += packet_bytes
            bucket[1] += 1
            bucket[3] = arrival_time
        self.total_bytes += packet_bytes

    @property
    def bytes_received(self) -> int:
        bucket = self._buckets.get(self.current_epoch_index)
        return bucket[0] if bucket else 0

    def finalize_epoch(self, epoch_end_time: float) -> RateEstimate:
        index = self.current_epoch_index
        expected_end = self.epoch_start(index + 1)
        if epoch_end_time < expected_end - _BOUNDARY_EPS:
            raise AccountingError(
                f"epoch {index} ends at {expected_end}, finalize called at {epoch_end_time}"
                " (double finalize?)")
        bucket = self._buckets.pop(index, None)
        self.current_epoch_index += 1
        if bucket is None:
            return RateEstimate(index, 0.0, 0, 0, no_data=True)
        nbytes, packets, first, last = bucket
        return RateEstimate(index, 8.0 * nbytes / self.epoch_length, nbytes, packets, False, first, last)
