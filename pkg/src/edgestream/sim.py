"""Discrete-event simulation wiring media, transport, netem, estimator,
controller and edge together.

Events at equal timestamps run in a fixed order:

1. link deliveries
2. epoch finalization (server)
3. feedback delivery (client)
4. controller decision (client)
5. frame generation / packet transmission (client)

Ties within one class keep insertion order. The loop is single-threaded
and every random draw comes from seed-derived generators, so a scenario and
seed fully determine the output.
"""

from __future__ import annotations

import dataclasses
import heapq
import itertools
import logging
import os
import random
from dataclasses import dataclass
from typing import Optional

from . import edge, metrics
from .controller import AdaptationDecision, Controller, Predictor
from .edge import ServiceKind, WorkerPool
from .estimator import Estimator
from .media import PRIMARY, SECONDARY, Encoder, apply_decision
from .netem import EventKind, Link
from .scenario import Scenario
from .transport import Reassembler, packetize

log = logging.getLogger(__name__)

DELIVER, EPOCH, FEEDBACK, DECIDE, SEND = range(1, 6)

_MEDIA_SALT = 0x6D656469
_SECONDARY_SALT = 0x7365636F
_EDGE_SALT = 0x65646765


@dataclass
class SimResult:
    scenario: Scenario
    summary: metrics.RunSummary
    records: list
    epochs: list
    decisions: list
    link_stats: dict

    def export(self, out_dir) -> dict:
        return metrics.export(self.summary, self.records, self.epochs, out_dir)


class Simulation:
    def __init__(self, scenario: Scenario):
        self.sc = sc = scenario
        self.link = Link(sc.schedule, sc.link)
        self.estimator = Estimator(sc.epoch_length)
        self.reassembler = Reassembler(sc.expiry_timeout)
        self.pool = WorkerPool(sc.worker_count, sc.service_times, random.Random(sc.seed ^ _EDGE_SALT),
                               drop_stale=sc.drop_stale)
        self.controller = Controller(Predictor(sc.predictor, sc.epoch_length), sc.ladder, sc.limits)
        if sc.adaptation_enabled:
            primary = dataclasses.replace(sc.primary, target_bitrate=min(sc.predictor.initial_rate, sc.limits.max_bitrate))
        else:
            primary = sc.fixed
        self.primary = Encoder(primary, random.Random(sc.seed ^ _MEDIA_SALT))
        self.secondary = Encoder(sc.secondary, random.Random(sc.seed ^ _SECONDARY_SALT))
        self.secondary_on = False
        self.decisions: list[AdaptationDecision] = []
        self.records: dict[tuple[int, int], metrics.FrameRecord] = {}
        self.epochs = [
            metrics.EpochRecord(k, k * sc.epoch_length,
                                sc.schedule.max_over(k * sc.epoch_length, min((k + 1) * sc.epoch_length, sc.run_length)))
            for k in range(sc.n_epochs)
        ]
        self.downlink_delay = self.link.send_feedback(0.0)
        self._queue: list = []
        self._seq = itertools.count()
        self._detections: list = []

    def push(self, t: float, kind: int, payload=None) -> None:
        heapq.heappush(self._queue, (t, kind, next(self._seq), payload))

    # -- client -----------------------------------------------------------

    def _emit_frame(self, encoder: Encoder, t: float) -> None:
        frame = encoder.next()
        self.records[(frame.stream_id, frame.frame_seq)] = metrics.FrameRecord(
            frame.stream_id, frame.frame_seq, round(frame.capture_time, 6), frame.size, str(frame.resolution))
        packets = packetize(frame, self.sc.mtu)
        if frame.stream_id == SECONDARY and self.sc.secondary_paced:
            gap = encoder.config.frame_interval / len(packets)
            for i, p in enumerate(packets):
                self.push(t + i * gap, SEND, p)
        else:
            for p in packets:
                self._send(p, t)

    def _send(self, packet, t: float) -> None:
        size = packet.wire_size
        self.controller.predictor.record_sent(size, t)
        event = self.link.offer(packet, size, t)
        if event.kind is EventKind.DELIVERED:
            self.push(event.deliver_time, DELIVER, event)

    def _schedule_next(self, encoder: Encoder, stream: int) -> None:
        t = encoder.next_capture_time
        if t < self.sc.run_length - 1e-9:
            self.push(t, SEND, stream)

    def _set_secondary(self, active: bool, bitrate: float, t: float) -> None:
        if active:
            cfg = dataclasses.replace(self.secondary.config, target_bitrate=max(bitrate, 1.0))
            if not self.secondary_on:
                cfg = dataclasses.replace(cfg, start_offset=max(0.0, t - self.secondary.frame_seq / cfg.fps))
                self.secondary.config = cfg
                self.secondary_on = True
                self._schedule_next(self.secondary, SECONDARY)
            else:
                self.secondary.update(cfg)
        else:
            self.secondary_on = False

    def _decide(self, epoch_index: int, t: float) -> None:
        predicted = self.controller.predictor.predict()
        row = self.epochs[epoch_index] if epoch_index < len(self.epochs) else None
        if self.sc.adaptation_enabled:
            d = self.controller.step(epoch_index)
            self.decisions.append(d)
            self.primary.update(apply_decision(self.primary.config, d))
            self._set_secondary(d.secondary_active, d.secondary_bitrate, t)
            values = dict(predicted_bps=d.predicted_bps, encoder_bitrate=d.encoder_bitrate,
                          primary_bitrate=d.primary_bitrate, secondary_bitrate=d.secondary_bitrate,
                          resolution=str(d.resolution), secondary_active=d.secondary_active)
        else:
            fixed = self.sc.fixed
            values = dict(predicted_bps=predicted, encoder_bitrate=fixed.target_bitrate,
                          primary_bitrate=fixed.target_bitrate, secondary_bitrate=0.0,
                          resolution=str(fixed.resolution), secondary_active=False)
        if row is not None:
            for k, v in values.items():
                setattr(row, k, v)

    # -- server -----------------------------------------------------------

    def _deliver(self, event, t: float) -> None:
        packet = event.packet
        self.estimator.observe(event.size, t)
        arrival = self.reassembler.push(packet, t)
        self._expire(t)
        if arrival is None:
            return
        rec = self.records[(arrival.stream_id, arrival.frame_seq)]
        rec.server_completion_time = arrival.completion_time
        for job in edge.route_frame(arrival.stream_id, arrival.frame_seq, t,
                                    self.secondary_on, self.sc.primary.fps):
            self.pool.submit(job)
            if job.service is ServiceKind.DETECTION:
                self._detections.append(job)

    def _expire(self, t: float) -> None:
        for key in self.reassembler.expire(t):
            self.records[key].outcome = metrics.EXPIRED

    def _finalize_epoch(self, t: float) -> None:
        est = self.estimator.finalize_epoch(t)
        row = self.epochs[est.epoch_index]
        row.estimate_bps = est.estimate_bps
        row.no_data = est.no_data
        self.push(self.link.send_feedback(t), FEEDBACK, est.to_feedback(t))

    # -- main loop --------------------------------------------------------

    def run(self) -> SimResult:
        sc = self.sc
        self.push(self.primary.next_capture_time, SEND, PRIMARY)
        for k in range(1, sc.n_epochs + 1):
            self.push(k * sc.epoch_length, EPOCH, None)
        if sc.adaptation_enabled:
            self._decide(0, 0.0)
        q = self._queue
        while q:
            t, kind, _, payload = heapq.heappop(q)
            if kind == DELIVER:
                self.link.advance(t)
                self._deliver(payload, t)
            elif kind == EPOCH:
                self._expire(t)
                self._finalize_epoch(t)
                self.controller.predictor.tick()
            elif kind == FEEDBACK:
                if self.controller.on_feedback(payload):
                    self.push(t, DECIDE, payload.epoch_index)
                    row = self.epochs[payload.epoch_index]
                    hist = self.controller.predictor.history[-1]
                    row.saturated = hist.saturated
            elif kind == DECIDE:
                self._decide(payload, t)
            elif payload == PRIMARY:
                self._emit_frame(self.primary, t)
                self._schedule_next(self.primary, PRIMARY)
            elif payload == SECONDARY:
                if self.secondary_on:
                    self._emit_frame(self.secondary, t)
                    self._schedule_next(self.secondary, SECONDARY)
            else:
                self._send(payload, t)
        self.pool.drain()
        for key in self.reassembler.expire(float("inf")):
            self.records[key].outcome = metrics.EXPIRED
        return self._collect()

    def _collect(self) -> SimResult:
        for job in self._detections:
            rec = self.records[(job.stream_id, job.frame_seq)]
            if job.dropped:
                rec.outcome = metrics.STALE
                continue
            rec.detection_start = round(job.start_time, 6)
            rec.detection_finish = round(job.finish_time, 6)
            rec.feedback_delivery_time = round(self.link.send_feedback(job.finish_time), 6)
            rec.complete(self.downlink_delay)
            rec.server_completion_time = round(rec.server_completion_time, 6)
        for rec in self.records.values():
            if rec.outcome != metrics.OK and rec.stream_id == SECONDARY and rec.server_completion_time is not None:
                rec.outcome = metrics.OK
                rec.server_completion_time = round(rec.server_completion_time, 6)
        records = [self.records[k] for k in sorted(self.records)]
        jobs = {}
        for job in self.pool.completed:
            key = f"{job.service.value}.stream{job.stream_id}"
            jobs[key] = jobs.get(key, 0) + 1
        jobs["detection.stale_dropped"] = len(self.pool.dropped)
        jobs["max_concurrent"] = self.pool.max_busy
        summary = metrics.summarize(records, self.epochs, jobs)
        summary.label = "adaptation" if self.sc.adaptation_enabled else "no-adaptation"
        summary.stale_feedback = self.controller.predictor.stale_messages
        summary.notes.append("jitter = population standard deviation of per-frame RTT")
        link_stats = dict(offered=self.link.offered, delivered=self.link.delivered, dropped=self.link.dropped)
        return SimResult(self.sc, summary, records, self.epochs, self.decisions, link_stats)


def run_sim(scenario: Scenario, out_dir: Optional[str | os.PathLike] = None) -> SimResult:
    result = Simulation(scenario).run()
    if out_dir is not None:
        result.export(out_dir)
    return result
