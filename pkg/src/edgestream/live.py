"""Live mode: the simulated loop over real UDP datagrams.

Client and server speak the transport wire formats plus three small
control datagrams. When ``emulate_link`` is set, the client pushes its
media through a :class:`TokenBucketShaper` that replays the scenario's
capacity schedule with 1 ms granularity, a tail-drop byte limit and the
uplink propagation delay; the server delays everything it sends back by the
downlink propagation delay.

Clocks are never synchronized. End-to-end latency is measured on the
client's clock alone (capture to result arrival). The server reports how
long it held each frame, so RTT is end-to-end minus that hold time. Every
one-way timestamp in the output is derived by assuming a symmetric path
(RTT / 2) and the summary says so.

Each process runs four sequential activities (send, receive, feedback,
metrics) that exchange immutable messages over bounded queues.
"""

from __future__ import annotations

import dataclasses
import heapq
import logging
import queue
import random
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from . import edge, metrics
from .controller import Controller, Predictor
from .edge import ServiceKind, WorkerPool
from .errors import EdgeStreamError, FramingError
from .estimator import Estimator
from .media import PRIMARY, SECONDARY, Encoder, apply_decision
from .netem import CapacitySchedule, LinkParams
from .scenario import Scenario
from .transport import FEEDBACK_SIZE, HEADER_SIZE, FeedbackMessage, MediaPacket, Reassembler, packetize

log = logging.getLogger(__name__)

HELLO = b"ESH1"
ACK = b"ESA1"
BYE = b"ESB1"

RESULT = struct.Struct("<BBBIQII")
RESULT_MARK = 0xD5
_OUTCOME_CODES = {metrics.OK: 0, metrics.STALE: 1, metrics.EXPIRED: 2}
_OUTCOME_NAMES = {v: k for k, v in _OUTCOME_CODES.items()}

TICK = 0.001
QUEUE_BOUND = 4096
ONE_WAY_NOTE = "live: one-way timestamps are RTT/2 estimates; rtt and e2e_latency are measured"


class UnreachableError(EdgeStreamError):
    pass


@dataclass(frozen=True)
class DetectionResult:
    """Server to client: what happened to one frame.

    ``wait_us`` and ``hold_us`` are server-clock intervals measured from the
    frame's completion to detection start and to detection finish.
    """

    stream_id: int
    frame_seq: int
    outcome: str
    capture_time_us: int
    wait_us: int = 0
    hold_us: int = 0

    def encode(self) -> bytes:
        return RESULT.pack(RESULT_MARK, self.stream_id, _OUTCOME_CODES[self.outcome], self.frame_seq,
                           self.capture_time_us, self.wait_us, self.hold_us)

    @classmethod
    def decode(cls, buf: bytes) -> "DetectionResult":
        if len(buf) != RESULT.size:
            raise FramingError(f"result datagram must be {RESULT.size} bytes, got {len(buf)}")
        mark, stream_id, code, seq, capture, wait, hold = RESULT.unpack(buf)
        if mark != RESULT_MARK or code not in _OUTCOME_NAMES:
            raise FramingError("not a result datagram")
        return cls(stream_id, seq, _OUTCOME_NAMES[code], capture, wait, hold)


def parse_addr(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


class TokenBucketShaper:
    """FIFO tail-drop queue drained by a token bucket.

    ``tick(now)`` refills ``capacity * TICK / 8`` bytes per elapsed tick,
    releases every head-of-line packet the tokens cover and returns the
    ones whose propagation delay has elapsed. The bucket holds at most one
    tick's worth of tokens (or one packet, whichever is larger), so idle
    periods do not bank credit.
    """

    def __init__(self, schedule: CapacitySchedule, params: LinkParams = LinkParams(), start: float = 0.0):
        self.schedule = schedule
        self.params = params
        self.clock = start
        self.tokens = 0.0
        self.queue: deque[bytes] = deque()
        self.queued_bytes = 0
        self.in_flight: deque[tuple[float, bytes]] = deque()
        self.dropped = 0

    def offer(self, datagram: bytes) -> bool:
        if self.queued_bytes + len(datagram) > self.params.queue_limit:
            self.dropped += 1
            return False
        self.queue.append(datagram)
        self.queued_bytes += len(datagram)
        return True

    def tick(self, now: float) -> list[bytes]:
        while self.clock + TICK <= now + 1e-12:
            self.clock += TICK
            rate = self.schedule.capacity_at(self.clock - TICK) / 8.0
            depth = max(rate * TICK, float(len(self.queue[0])) if self.queue else 0.0)
            self.tokens = min(self.tokens + rate * TICK, depth)
            while self.queue and len(self.queue[0]) <= self.tokens:
                datagram = self.queue.popleft()
                self.queued_bytes -= len(datagram)
                self.tokens -= len(datagram)
                self.in_flight.append((self.clock + self.params.prop_delay_up, datagram))
            if not self.queue:
                self.tokens = 0.0
        ready = []
        while self.in_flight and self.in_flight[0][0] <= now:
            ready.append(self.in_flight.popleft()[1])
        return ready


def _sleep_until(clock: Callable[[], float], t: float) -> None:
    delay = t - clock()
    if delay > 0:
        time.sleep(delay)


# -- client -----------------------------------------------------------------


@dataclass(frozen=True)
class _SentEpoch:
    epoch_index: int
    nbytes: int


@dataclass(frozen=True)
class _Frame:
    stream_id: int
    frame_seq: int
    capture_time: float
    size: int
    resolution: str


@dataclass(frozen=True)
class _Received:
    result: DetectionResult
    at: float


class LiveClient:
    """Streams the scenario to a :class:`LiveServer` and measures the results."""

    def __init__(self, scenario: Scenario, peer: tuple[str, int], sock: Optional[socket.socket] = None):
        self.sc = scenario
        self.peer = peer
        self.sock = sock or socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.stop = threading.Event()
        self.ctrl_q: queue.Queue = queue.Queue(QUEUE_BOUND)
        self.decision_q: queue.Queue = queue.Queue(QUEUE_BOUND)
        self.metrics_q: queue.Queue = queue.Queue(QUEUE_BOUND)
        self.t0 = 0.0
        self.decisions: list = []
        self.errors: list[BaseException] = []

    def now(self) -> float:
        return time.monotonic() - self.t0

    def connect(self) -> None:
        """HELLO/ACK handshake; raises :class:`UnreachableError` after the timeout."""
        deadline = time.monotonic() + self.sc.connect_timeout
        self.sock.settimeout(0.2)
        while time.monotonic() < deadline:
            try:
                self.sock.sendto(HELLO, self.peer)
                data, _ = self.sock.recvfrom(2048)
            except socket.timeout:
                continue
            except ConnectionRefusedError:
                time.sleep(0.2)
                continue
            except OSError as exc:
                raise UnreachableError(f"peer {self.peer[0]}:{self.peer[1]}: {exc}") from exc
            if data == ACK:
                return
        raise UnreachableError(
            f"peer {self.peer[0]}:{self.peer[1]} unreachable after {self.sc.connect_timeout:g} s")

    def run(self) -> metrics.RunSummary:
        self.connect()
        self.t0 = time.monotonic()
        threads = [threading.Thread(target=self._guard(f), name=f.__name__, daemon=True)
                   for f in (self._receive, self._feedback, self._metrics)]
        for th in threads:
            th.start()
        try:
            self._guard(self._send)()
            _sleep_until(self.now, self.now() + self.sc.expiry_timeout + 0.5)
        finally:
            self.stop.set()
            for th in threads:
                th.join(5.0)
            try:
                self.sock.sendto(BYE, self.peer)
            except OSError:
                pass
        if self.errors:
            raise self.errors[0]
        return self.summary

    def _guard(self, fn):
        def wrapped():
            try:
                fn()
            except BaseException as exc:  # surfaced by run()
                self.errors.append(exc)
                self.stop.set()
        wrapped.__name__ = fn.__name__
        return wrapped

    def _send(self) -> None:
        sc = self.sc
        if sc.adaptation_enabled:
            primary_cfg = dataclasses.replace(
                sc.primary, target_bitrate=min(sc.predictor.initial_rate, sc.limits.max_bitrate))
        else:
            primary_cfg = sc.fixed
        primary = Encoder(primary_cfg, random.Random(sc.seed))
        secondary = Encoder(sc.secondary, random.Random(sc.seed + 1))
        secondary_on = False
        shaper = TokenBucketShaper(sc.schedule, sc.link) if sc.emulate_link else None
        paced: list[tuple[float, int, bytes]] = []
        order = 0
        sent_epoch, sent_bytes = 0, 0

        def enqueue(datagram: bytes) -> None:
            nonlocal sent_bytes
            sent_bytes += len(datagram)
            if shaper is None:
                self.sock.sendto(datagram, self.peer)
            else:
                shaper.offer(datagram)

        def emit(encoder: Encoder, t: float) -> None:
            nonlocal order
            frame = encoder.next()
            self.metrics_q.put(_Frame(frame.stream_id, frame.frame_seq, frame.capture_time,
                                      frame.size, str(frame.resolution)))
            packets = packetize(frame, sc.mtu, with_payload=True)
            if frame.stream_id == SECONDARY and sc.secondary_paced:
                gap = encoder.config.frame_interval / len(packets)
                for i, p in enumerate(packets):
                    heapq.heappush(paced, (t + i * gap, order, p.encode()))
                    order += 1
            else:
                for p in packets:
                    enqueue(p.encode())

        next_tick = 0.0
        while not self.stop.is_set():
            t = self.now()
            if t >= sc.run_length and not paced and (shaper is None or not (shaper.queue or shaper.in_flight)):
                break
            while True:
                try:
                    d = self.decision_q.get_nowait()
                except queue.Empty:
                    break
                primary.update(apply_decision(primary.config, d))
                if d.secondary_active:
                    cfg = dataclasses.replace(secondary.config, target_bitrate=max(d.secondary_bitrate, 1.0))
                    if not secondary_on:
                        cfg = dataclasses.replace(cfg, start_offset=max(0.0, t - secondary.frame_seq / cfg.fps))
                        secondary.config = cfg
                    else:
                        secondary.update(cfg)
                secondary_on = d.secondary_active
            epoch = int(t // sc.epoch_length)
            if epoch != sent_epoch:
                self.ctrl_q.put(_SentEpoch(sent_epoch, sent_bytes))
                sent_epoch, sent_bytes = epoch, 0
            if t < sc.run_length:
                while primary.next_capture_time <= t:
                    emit(primary, primary.next_capture_time)
                while secondary_on and secondary.next_capture_time <= t:
                    emit(secondary, secondary.next_capture_time)
            while paced and paced[0][0] <= t:
                enqueue(heapq.heappop(paced)[2])
            if shaper is not None:
                for datagram in shaper.tick(t):
                    self.sock.sendto(datagram, self.peer)
            next_tick += TICK
            _sleep_until(self.now, next_tick)
        self.link_dropped = shaper.dropped if shaper else 0

    def _receive(self) -> None:
        self.sock.settimeout(0.05)
        while not self.stop.is_set():
            try:
                data, _ = self.sock.recvfrom(2048)
            except socket.timeout:
                continue
            except ConnectionRefusedError:
                continue
            at = self.now()
            if len(data) == FEEDBACK_SIZE:
                self.ctrl_q.put(FeedbackMessage.decode(data))
            elif len(data) == RESULT.size:
                self.metrics_q.put(_Received(DetectionResult.decode(data), at))

    def _feedback(self) -> None:
        sc = self.sc
        controller = Controller(Predictor(sc.predictor, sc.epoch_length), sc.ladder, sc.limits)
        predictor = controller.predictor
        if sc.adaptation_enabled:
            self.decision_q.put(controller.step(0))
        boundary = sc.epoch_length
        while not self.stop.is_set():
            try:
                msg = self.ctrl_q.get(timeout=max(0.0, min(0.05, boundary - self.now())))
            except queue.Empty:
                msg = None
            if self.now() >= boundary:
                boundary += sc.epoch_length
                predictor.tick()
                if sc.adaptation_enabled and predictor.silent_epochs > sc.predictor.silence_epochs:
                    d = controller.step(predictor.last_epoch + 1 if predictor.last_epoch is not None else 0)
                    self.decisions.append(d)
                    self.decision_q.put(d)
            if isinstance(msg, _SentEpoch):
                predictor.record_sent(msg.nbytes, msg.epoch_index * sc.epoch_length)
            elif isinstance(msg, FeedbackMessage) and controller.on_feedback(msg) and sc.adaptation_enabled:
                d = controller.step(msg.epoch_index)
                self.decisions.append(d)
                self.decision_q.put(d)

    def _metrics(self) -> None:
        records: dict[tuple[int, int], metrics.FrameRecord] = {}
        while True:
            try:
                item = self.metrics_q.get(timeout=0.05)
            except queue.Empty:
                if self.stop.is_set():
                    break
                continue
            if isinstance(item, _Frame):
                records[(item.stream_id, item.frame_seq)] = metrics.FrameRecord(
                    item.stream_id, item.frame_seq, round(item.capture_time, 6), item.size, item.resolution)
                continue
            r = item.result
            rec = records.get((r.stream_id, r.frame_seq))
            if rec is None:
                continue
            if r.outcome != metrics.OK:
                rec.outcome = r.outcome
                continue
            e2e = item.at - rec.capture_time
            rtt = max(0.0, e2e - r.hold_us / 1e6)
            completion = rec.capture_time + rtt / 2
            rec.server_completion_time = metrics.quantize(completion)
            if r.stream_id == PRIMARY:
                rec.detection_start = metrics.quantize(completion + r.wait_us / 1e6)
                rec.detection_finish = metrics.quantize(completion + r.hold_us / 1e6)
                rec.feedback_delivery_time = metrics.quantize(item.at)
                rec.complete(rtt / 2)
                rec.rtt = metrics.quantize(rtt)
            else:
                rec.outcome = metrics.OK
        ordered = [records[k] for k in sorted(records)]
        self.records = ordered
        self.summary = metrics.summarize(ordered)
        self.summary.label = "live-" + ("adaptation" if self.sc.adaptation_enabled else "no-adaptation")
        self.summary.notes.append(ONE_WAY_NOTE)


# -- server -----------------------------------------------------------------


@dataclass(frozen=True)
class _Outgoing:
    send_at: float
    datagram: bytes


class LiveServer:
    """Receives media, reports per-epoch rate estimates and detection results."""

    def __init__(self, scenario: Scenario, bind: tuple[str, int], sock: Optional[socket.socket] = None):
        self.sc = scenario
        self.sock = sock
        if self.sock is None:
            self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self.sock.bind(bind)
        self.stop = threading.Event()
        self.edge_q: queue.Queue = queue.Queue(QUEUE_BOUND)
        self.out_q: queue.Queue = queue.Queue(QUEUE_BOUND)
        self.peer: Optional[tuple[str, int]] = None
        self.t0 = 0.0
        self.estimates: list = []
        self.jobs: dict = {}
        self.errors: list[BaseException] = []

    @property
    def address(self) -> tuple[str, int]:
        return self.sock.getsockname()

    def now(self) -> float:
        return time.monotonic() - self.t0

    def serve(self, idle_timeout: Optional[float] = None) -> list:
        """Run one session; returns the per-epoch estimates."""
        self.sock.settimeout(idle_timeout)
        while self.peer is None:
            try:
                data, addr = self.sock.recvfrom(2048)
            except socket.timeout:
                raise UnreachableError(f"no client within {idle_timeout:g} s") from None
            if data == HELLO:
                self.peer = addr
        self.t0 = time.monotonic()
        self.sock.sendto(ACK, self.peer)
        threads = [threading.Thread(target=self._guard(f), name=f.__name__, daemon=True)
                   for f in (self._edge, self._feedback)]
        for th in threads:
            th.start()
        self._guard(self._receive)()
        self.stop.set()
        for th in threads:
            th.join(5.0)
        if self.errors:
            raise self.errors[0]
        return self.estimates

    def _guard(self, fn):
        def wrapped():
            try:
                fn()
            except BaseException as exc:
                self.errors.append(exc)
                self.stop.set()
        wrapped.__name__ = fn.__name__
        return wrapped

    def _reply(self, t: float, datagram: bytes) -> None:
        self.out_q.put(_Outgoing(t + self.sc.link.prop_delay_down, datagram))

    def _receive(self) -> None:
        sc = self.sc
        estimator = Estimator(sc.epoch_length)
        reassembler = Reassembler(sc.expiry_timeout)
        captures: dict[tuple[int, int], int] = {}
        boundary = sc.epoch_length
        self.sock.settimeout(0.02)
        while not self.stop.is_set():
            try:
                data, addr = self.sock.recvfrom(65535)
            except socket.timeout:
                data = None
            t = self.now()
            while t >= boundary:
                est = estimator.finalize_epoch(boundary)
                self.estimates.append(est)
                self._reply(boundary, est.to_feedback(boundary).encode())
                boundary += sc.epoch_length
            for key in reassembler.expire(t):
                self._reply(t, DetectionResult(key[0], key[1], metrics.EXPIRED, captures.pop(key, 0)).encode())
            if data is None:
                continue
            if data == BYE:
                break
            if data == HELLO:
                self.sock.sendto(ACK, addr)
                continue
            if len(data) < HEADER_SIZE:
                continue
            packet = MediaPacket.decode(data)
            estimator.observe(len(data), t)
            captures.setdefault((packet.stream_id, packet.frame_seq), packet.capture_time_us)
            arrival = reassembler.push(packet, t)
            if arrival is not None:
                captures.pop((arrival.stream_id, arrival.frame_seq), None)
                self.edge_q.put(arrival)

    def _edge(self) -> None:
        sc = self.sc
        pool = WorkerPool(sc.worker_count, sc.service_times, random.Random(sc.seed), drop_stale=sc.drop_stale)
        last_secondary = -1e9
        pending: dict[int, object] = {}
        while not (self.stop.is_set() and self.edge_q.empty()):
            try:
                arrival = self.edge_q.get(timeout=0.005)
            except queue.Empty:
                arrival = None
            if arrival is not None:
                t = max(arrival.completion_time, pool.clock)
                if arrival.stream_id == SECONDARY:
                    last_secondary = t
                    self._reply(t, DetectionResult(SECONDARY, arrival.frame_seq, metrics.OK,
                                                   round(arrival.capture_time * 1e6)).encode())
                secondary_active = t - last_secondary < 1.5 / sc.secondary.fps
                for job in edge.route_frame(arrival.stream_id, arrival.frame_seq, t, secondary_active,
                                            sc.primary.fps):
                    pool.submit(job)
                    if job.service is ServiceKind.DETECTION:
                        pending[job.frame_seq] = (job, arrival)
            pool.advance(max(pool.clock, self.now() - 0.002))
            for seq in list(pending):
                job, arr = pending[seq]
                if job.dropped:
                    self._reply(pool.clock, DetectionResult(PRIMARY, seq, metrics.STALE,
                                                            round(arr.capture_time * 1e6)).encode())
                elif job.finish_time is None:
                    continue
                else:
                    c = arr.completion_time
                    self._reply(job.finish_time, DetectionResult(
                        PRIMARY, seq, metrics.OK, round(arr.capture_time * 1e6),
                        round((job.start_time - c) * 1e6), round((job.finish_time - c) * 1e6)).encode())
                del pending[seq]
        pool.drain()
        for job in pool.completed:
            key = f"{job.service.value}.stream{job.stream_id}"
            self.jobs[key] = self.jobs.get(key, 0) + 1

    def _feedback(self) -> None:
        heap: list = []
        order = 0
        while not (self.stop.is_set() and self.out_q.empty() and not heap):
            timeout = 0.05 if not heap else max(0.0, min(0.05, heap[0][0] - self.now()))
            try:
                item = self.out_q.get(timeout=timeout)
                heapq.heappush(heap, (item.send_at, order, item.datagram))
                order += 1
            except queue.Empty:
                pass
            while heap and heap[0][0] <= self.now():
                self.sock.sendto(heapq.heappop(heap)[2], self.peer)
            if self.stop.is_set() and heap:
                break


def run_live(scenario: Scenario, role: str, peer: str) -> Optional[metrics.RunSummary]:
    """Run one side of a live session. ``peer`` is the bind address for the server."""
    addr = parse_addr(peer)
    if role == "server":
        LiveServer(scenario, addr).serve(idle_timeout=None)
        return None
    if role == "client":
        return LiveClient(scenario, addr).run()
    raise ValueError(f"role must be client or server, got {role!r}")
