"""Edge microservice scheduling and latency models.

No inference happens here. Each service is a latency model; the pool
decides when jobs start and finish.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .errors import ConfigError, RoutingError
from .media import PRIMARY, SECONDARY

QOS_BUDGET = 0.100


class ServiceKind(str, Enum):
    DETECTION = "detection"
    NAVIGATION = "navigation"
    VLM = "vlm"


@dataclass(frozen=True)
class ServiceTime:
    """Deterministic or lognormal service time in seconds.

    For the lognormal case ``mean`` and ``sigma`` describe the resulting
    distribution's mean and the log-space standard deviation.
    """

    mean: float
    sigma: float = 0.0
    kind: str = "deterministic"

    def validate(self) -> "ServiceTime":
        if not self.mean > 0:
            raise ConfigError(f"service time mean must be positive, got {self.mean}")
        if self.kind not in ("deterministic", "lognormal"):
            raise ConfigError(f"unknown service time distribution {self.kind!r}")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        return self

    def sample(self, rng: random.Random) -> float:
        if self.kind == "deterministic" or self.sigma == 0:
            return self.mean
        mu = math.log(self.mean) - self.sigma ** 2 / 2
        return rng.lognormvariate(mu, self.sigma)


# sigma 0.185 puts the lognormal interquartile range near 5 ms at a 20 ms mean
DEFAULT_SERVICE_TIMES = {
    ServiceKind.DETECTION: ServiceTime(0.020, 0.185, "lognormal"),
    ServiceKind.NAVIGATION: ServiceTime(0.300),
    ServiceKind.VLM: ServiceTime(0.800),
}


@dataclass
class InferenceJob:
    service: ServiceKind
    stream_id: int
    frame_seq: int
    enqueue_time: float
    start_time: Optional[float] = None
    finish_time: Optional[float] = None
    dropped: bool = False
    worker: Optional[int] = None


def route_frame(stream_id: int, frame_seq: int, t: float, secondary_active: bool, fps_primary: float) -> list[InferenceJob]:
    """Jobs triggered by one completed frame.

    Primary frames always get detection; they also feed navigation and VLM
    once per second while no secondary stream runs. Secondary frames feed
    navigation and VLM only.
    """
    if stream_id == PRIMARY:
        jobs = [InferenceJob(ServiceKind.DETECTION, stream_id, frame_seq, t)]
        if not secondary_active and frame_seq % round(fps_primary) == 0:
            jobs.append(InferenceJob(ServiceKind.NAVIGATION, stream_id, frame_seq, t))
            jobs.append(InferenceJob(ServiceKind.VLM, stream_id, frame_seq, t))
        return jobs
    if stream_id == SECONDARY:
        return [InferenceJob(ServiceKind.NAVIGATION, stream_id, frame_seq, t),
                InferenceJob(ServiceKind.VLM, stream_id, frame_seq, t)]
    raise RoutingError(f"unknown stream_id {stream_id}")


@dataclass
class _Worker:
    home: ServiceKind
    steals: tuple[ServiceKind, ...]
    job: Optional[InferenceJob] = None


def _default_homes(worker_count: int) -> list[tuple[ServiceKind, tuple[ServiceKind, ...]]]:
    if worker_count < 2:
        raise ConfigError("worker_count must be >= 2 (one dedicated detection worker plus one more)")
    homes = [(ServiceKind.DETECTION, ())]
    others = (ServiceKind.NAVIGATION, ServiceKind.VLM)
    for i in range(worker_count - 1):
        home = others[i % 2]
        homes.append((home, tuple(k for k in others if k != home)))
    return homes


class WorkerPool:
    """Event-driven worker pool.

    Worker 0 serves detection only. The remaining workers alternate between
    navigation and VLM as their home queue and steal from the other one when
    idle. Service times are drawn when a job starts.

    ``drop_stale`` discards a waiting detection job when a newer one arrives.
    """

    def __init__(self, worker_count: int = 3, service_times: Optional[dict] = None,
                 rng: Optional[random.Random] = None, drop_stale: bool = True):
        self.service_times = dict(DEFAULT_SERVICE_TIMES)
        if service_times:
            self.service_times.update(service_times)
        for st in self.service_times.values():
            st.validate()
        self.workers = [_Worker(h, s) for h, s in _default_homes(worker_count)]
        self.queues: dict[ServiceKind, deque[InferenceJob]] = {k: deque() for k in ServiceKind}
        self.rng = rng if rng is not None else random.Random(0)
        self.drop_stale = drop_stale
        self.clock = 0.0
        self.completed: list[InferenceJob] = []
        self.dropped: list[InferenceJob] = []
        self.max_busy = 0

    @property
    def worker_count(self) -> int:
        return len(self.workers)

    @property
    def busy(self) -> int:
        return sum(w.job is not None for w in self.workers)

    def submit(self, job: InferenceJob) -> None:
        self.advance(job.enqueue_time)
        queue = self.queues[job.service]
        if self.drop_stale and job.service is ServiceKind.DETECTION:
            while queue:
                stale = queue.popleft()
                stale.dropped = True
                self.dropped.append(stale)
        queue.append(job)
        self._dispatch(job.enqueue_time)

    def _dispatch(self, now: float) -> None:
        for i, w in enumerate(self.workers):
            if w.job is not None:
                continue
            for kind in (w.home, *w.steals):
                if self.queues[kind]:
                    job = self.queues[kind].popleft()
                    job.start_time = now
                    job.finish_time = now + self.service_times[kind].sample(self.rng)
                    job.worker = i
                    w.job = job
                    break
        self.max_busy = max(self.max_busy, self.busy)

    def next_completion(self) -> float:
        times = [w.job.finish_time for w in self.workers if w.job is not None]
        return min(times) if times else math.inf

    def advance(self, now: float) -> list[InferenceJob]:
        """Complete every job finishing at or before ``now``; returns them in finish order."""
        if now < self.clock:
            raise RuntimeError(f"pool clock went backwards: {now} < {self.clock}")
        done = []
        while True:
            t = self.next_completion()
            if t > now or t == math.inf:
                break
            for w in self.workers:
                if w.job is not None and w.job.finish_time == t:
                    done.append(w.job)
                    w.job = None
            self._dispatch(t)
        self.clock = now
        self.completed.extend(done)
        return done

    def drain(self) -> list[InferenceJob]:
        return self.advance(math.inf) if self.next_completion() < math.inf else []


def run(pool: WorkerPool, jobs: list[InferenceJob]) -> list[InferenceJob]:
    """Submit ``jobs`` (sorted by enqueue time) and run the pool to completion."""
    for job in sorted(jobs, key=lambda j: j.enqueue_time):
        pool.submit(job)
    pool.drain()
    return [j for j in jobs if not j.dropped]


def e2e_latency(capture_time: float, server_completion: float, detection_finish: float,
                feedback_delivery: float) -> float:
    """Capture-to-result latency of one frame's detection.

    The three legs are uplink (capture to last fragment), detection wait
    plus execution, and downlink delivery of the result.
    """
    if not capture_time <= server_completion <= detection_finish <= feedback_delivery:
        raise ValueError("frame timeline is not monotone")
    return feedback_delivery - capture_time
