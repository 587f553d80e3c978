"""Client-side rate adaptation.

Three stages run once per feedback epoch:

1. :class:`Predictor` turns the server's throughput reports into capacity
   samples and forecasts the next epoch with a normalized LMS linear
   filter, scaled by a safety factor.
2. :func:`decide` maps the forecast onto an encoder bitrate, a resolution
   tier of the :class:`ResolutionLadder` and the secondary-stream switch.
3. The caller hands the resulting :class:`AdaptationDecision` to the
   encoders.

A throughput report can never exceed what the client sent, so on its own
it only says "capacity is at least this much". The predictor therefore
compares each report with the bytes the client put on the wire in the same
epoch: a report that differs from it means the bottleneck was busy and the
report is the capacity; otherwise the sample is nudged upward so the rate
can climb until the link pushes back. Bytes sent but not yet reported as
received are tracked as a standing queue and netted out of the next
prediction so the queue drains within one epoch.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import ConfigError
from .media import R480, R720, R1080, Resolution
from .transport import FeedbackMessage


@dataclass(frozen=True)
class PredictorConfig:
    order: int = 4
    window: int = 10
    gamma: float = 0.9
    step_size: float = 0.5
    floor_bps: float = 100e3
    initial_rate: float = 20e6
    probe_step: float = 0.025
    probe_max_gain: float = 1.25
    saturation_tolerance: float = 0.01
    silence_epochs: int = 2
    silence_decay: float = 0.8
    drain_slack: float = 0.05

    def validate(self) -> "PredictorConfig":
        if not self.window >= self.order >= 1:
            raise ConfigError(f"need window >= order >= 1, got window={self.window} order={self.order}")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0 < self.step_size < 2:
            raise ConfigError(f"step_size must be in (0, 2), got {self.step_size}")
        if not self.floor_bps > 0 or not self.initial_rate > 0:
            raise ConfigError("floor_bps and initial_rate must be positive")
        if self.probe_step < 0 or not self.probe_max_gain >= 1:
            raise ConfigError("probe_step must be >= 0 and probe_max_gain >= 1")
        if not 0 <= self.saturation_tolerance < 1:
            raise ConfigError("saturation_tolerance must be in [0, 1)")
        if self.silence_epochs < 1 or not 0 < self.silence_decay <= 1:
            raise ConfigError("silence_epochs must be >= 1 and silence_decay in (0, 1]")
        if self.drain_slack < 0:
            raise ConfigError("drain_slack must be >= 0")
        return self


class NlmsFilter:
    """Order-``P`` normalized LMS one-step-ahead predictor.

    Starts as a pass-through of the newest sample (weights ``[1, 0, ...]``)
    and adapts once ``P`` samples are available. Output is clamped to the
    range of the current input vector, which keeps the filter from
    extrapolating past anything it has seen.
    """

    def __init__(self, order: int = 4, step_size: float = 0.5):
        self.order = order
        self.step_size = step_size
        self.weights = [1.0] + [0.0] * (order - 1)
        self.inputs: deque[float] = deque(maxlen=order)  # newest first

    def _raw(self) -> float:
        return sum(w * x for w, x in zip(self.weights, self.inputs))

    def output(self) -> Optional[float]:
        if not self.inputs:
            return None
        if len(self.inputs) < self.order:
            return self.inputs[0]
        return min(max(self._raw(), min(self.inputs)), max(self.inputs))

    def update(self, sample: float) -> None:
        if len(self.inputs) == self.order:
            err = sample - self._raw()
            norm = sum(x * x for x in self.inputs)
            if norm > 0:
                g = self.step_size * err / norm
                self.weights = [w + g * x for w, x in zip(self.weights, self.inputs)]
        self.inputs.appendleft(sample)


@dataclass
class HistoryEntry:
    epoch_index: int
    estimate_bps: float
    missing: bool
    sample_bps: Optional[float] = None
    saturated: Optional[bool] = None


class Predictor:
    """Feedback history plus next-epoch link-rate forecast."""

    def __init__(self, config: PredictorConfig = PredictorConfig(), epoch_length: float = 1.0):
        self.config = config.validate()
        self.epoch_length = epoch_length
        self.history: deque[HistoryEntry] = deque(maxlen=config.window)
        self.filter = NlmsFilter(config.order, config.step_size)
        self.last_epoch: Optional[int] = None
        self.stale_messages = 0
        self.silent_epochs = 0
        self._sent: dict[int, int] = {}
        self._last_sample: Optional[float] = None
        self.capacity_bps: Optional[float] = None
        self.probe_epochs = 0
        self.backlog_bits = 0.0

    def record_sent(self, nbytes: int, t: float) -> None:
        """Account on-wire bytes the client transmitted at time ``t``."""
        index = math.floor(t / self.epoch_length + 1e-9)
        self._sent[index] = self._sent.get(index, 0) + nbytes

    def sent_bps(self, epoch_index: int) -> float:
        return 8.0 * self._sent.get(epoch_index, 0) / self.epoch_length

    def ingest(self, msg: FeedbackMessage) -> bool:
        """Fold one feedback message in. Returns False for stale/duplicate ones."""
        if self.last_epoch is not None and msg.epoch_index <= self.last_epoch:
            self.stale_messages += 1
            return False
        self.last_epoch = msg.epoch_index
        self.silent_epochs = 0
        estimate = float(msg.estimate_bps)
        entry = HistoryEntry(msg.epoch_index, estimate, missing=estimate <= 0)
        sent = self.sent_bps(msg.epoch_index)
        if not entry.missing:
            entry.saturated, entry.sample_bps = self._sample(estimate, sent)
            self._last_sample = entry.sample_bps
            self.filter.update(entry.sample_bps)
        elif self._last_sample is not None:
            self.filter.update(self._last_sample)
        if entry.saturated is False:
            self.backlog_bits = 0.0
        else:
            self.backlog_bits = max(0.0, self.backlog_bits + (sent - estimate) * self.epoch_length)
        self.history.append(entry)
        for old in [k for k in self._sent if k <= msg.epoch_index]:
            del self._sent[old]
        return True

    def _sample(self, estimate: float, sent: float) -> tuple[bool, float]:
        """Capacity sample for one epoch.

        If the server received noticeably less than was sent (queue building)
        or more (backlog draining) the bottleneck was busy and the estimate is
        the capacity. Otherwise capacity is only known to be at least the
        estimate, and the sample asks for a little more: ``probe_step`` while
        near the last measured capacity, ``probe_max_gain`` once the rate has
        passed it on two epochs in a row without the link pushing back.
        """
        cfg = self.config
        if sent <= 0 or abs(estimate - sent) > cfg.saturation_tolerance * sent:
            # a draining queue can empty mid-epoch, so keep the best of a saturated run
            prev = self.history[-1] if self.history else None
            run = prev is not None and prev.saturated and prev.epoch_index == self.last_epoch - 1
            self.capacity_bps = max(estimate, self.capacity_bps) if run and self.capacity_bps else estimate
            self.probe_epochs = 0
            return True, estimate
        if self.capacity_bps is not None and estimate > self.capacity_bps:
            self.probe_epochs += 1
        else:
            self.probe_epochs = 0
        self.capacity_bps = max(estimate, self.capacity_bps or 0.0)
        gain = cfg.probe_max_gain if self.probe_epochs >= 2 else 1 + cfg.probe_step
        return False, estimate * gain / cfg.gamma

    def tick(self) -> None:
        """Called once per epoch boundary; counts epochs without feedback."""
        self.silent_epochs += 1

    @property
    def has_estimate(self) -> bool:
        return self._last_sample is not None

    def predict(self) -> float:
        cfg = self.config
        out = self.filter.output()
        if out is None:
            rate = cfg.initial_rate
        else:
            rate = cfg.gamma * max(cfg.floor_bps, out)
            rate -= max(0.0, self.backlog_bits - cfg.drain_slack * rate) / self.epoch_length
        overdue = self.silent_epochs - cfg.silence_epochs
        if overdue > 0:
            rate *= cfg.silence_decay ** overdue
        return max(rate, cfg.floor_bps * cfg.gamma)


@dataclass(frozen=True)
class ResolutionLadder:
    """Resolution tiers keyed by the minimum predicted rate that selects them."""

    tiers: tuple[tuple[float, Resolution], ...] = ((0.0, R480), (5e6, R720), (10e6, R1080))
    hysteresis_margin: float = 0.1

    def validate(self) -> "ResolutionLadder":
        if not self.tiers:
            raise ConfigError("resolution ladder is empty")
        thresholds = [t for t, _ in self.tiers]
        if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ConfigError(f"ladder thresholds must strictly increase: {thresholds}")
        if self.tiers[-1][1] != R1080:
            raise ConfigError(f"top ladder tier must be 1920x1080, got {self.tiers[-1][1]}")
        if not 0 <= self.hysteresis_margin < 1:
            raise ConfigError("hysteresis_margin must be in [0, 1)")
        return self

    @property
    def resolutions(self) -> list[Resolution]:
        return [r for _, r in self.tiers]

    def tier_index(self, resolution: Resolution) -> int:
        return self.resolutions.index(resolution)

    def plain_tier(self, predicted_bps: float) -> int:
        """Tier index without hysteresis."""
        index = 0
        for i, (threshold, _) in enumerate(self.tiers):
            if predicted_bps >= threshold:
                index = i
        return index

    def select(self, predicted_bps: float, current: Optional[int]) -> int:
        """Tier index with hysteresis relative to the ``current`` tier.

        Moving down is immediate; moving up to a tier needs the prediction to
        clear that tier's threshold by ``hysteresis_margin``.
        """
        target = self.plain_tier(predicted_bps)
        if current is None or target <= current:
            return target
        up = current
        for i in range(current + 1, target + 1):
            if predicted_bps >= self.tiers[i][0] * (1 + self.hysteresis_margin):
                up = i
        return up


@dataclass(frozen=True)
class Limits:
    max_bitrate: float = 20e6
    secondary_threshold: float = 5e6
    secondary_bitrate: float = 1.5e6
    floor_bps: float = 100e3

    def validate(self) -> "Limits":
        if not (self.max_bitrate > 0 and self.secondary_threshold > 0
                and self.secondary_bitrate > 0 and self.floor_bps > 0):
            raise ConfigError("controller limits must all be positive")
        return self


@dataclass(frozen=True)
class AdaptationDecision:
    """One epoch's encoder settings.

    ``encoder_bitrate`` is the combined budget of both streams and equals
    ``min(predicted_bps, max_bitrate)``; ``primary_bitrate`` and
    ``secondary_bitrate`` split it.
    """

    epoch_index: int
    predicted_bps: float
    encoder_bitrate: float
    primary_bitrate: float
    secondary_bitrate: float
    resolution: Resolution
    secondary_active: bool


def secondary_next(predicted_bps: float, currently_active: bool, threshold: float, margin: float) -> bool:
    bound = threshold * (1 + margin) if currently_active else threshold
    return predicted_bps < bound


def decide(
    predicted_bps: float,
    ladder: ResolutionLadder,
    limits: Limits,
    previous: Optional[AdaptationDecision],
    epoch_index: int = 0,
) -> AdaptationDecision:
    if not predicted_bps > 0:
        raise ValueError(f"predicted_bps must be positive, got {predicted_bps}")
    budget = min(predicted_bps, limits.max_bitrate)
    was_active = previous.secondary_active if previous else False
    active = secondary_next(predicted_bps, was_active, limits.secondary_threshold, ladder.hysteresis_margin)
    if active:
        resolution = ladder.tiers[0][1]
        primary = max(min(limits.floor_bps, budget), budget - limits.secondary_bitrate)
        secondary = budget - primary
    else:
        current = ladder.tier_index(previous.resolution) if previous else None
        resolution = ladder.tiers[ladder.select(predicted_bps, current)][1]
        primary, secondary = budget, 0.0
    return AdaptationDecision(
        epoch_index=epoch_index,
        predicted_bps=predicted_bps,
        encoder_bitrate=budget,
        primary_bitrate=primary,
        secondary_bitrate=secondary,
        resolution=resolution,
        secondary_active=active,
    )


@dataclass
class Controller:
    """Predictor + decision state owned by the client loop."""

    predictor: Predictor
    ladder: ResolutionLadder = field(default_factory=ResolutionLadder)
    limits: Limits = field(default_factory=Limits)
    decision: Optional[AdaptationDecision] = None

    def on_feedback(self, msg: FeedbackMessage) -> bool:
        return self.predictor.ingest(msg)

    def step(self, epoch_index: int) -> AdaptationDecision:
        self.decision = decide(self.predictor.predict(), self.ladder, self.limits, self.decision, epoch_index)
        return self.decision


def run_predictor(estimates: Sequence[float], config: PredictorConfig = PredictorConfig()) -> list[float]:
    """Feed raw estimates (all treated as saturated measurements) and collect predictions."""
    p = Predictor(config)
    out = []
    for i, e in enumerate(estimates):
        p.ingest(FeedbackMessage(i, round(e), 0))
        out.append(p.predict())
    return out
