"""Per-frame and per-epoch records, run summaries and exports.

Percentiles are nearest-rank. Latencies are stored rounded to the
microsecond so that statistics recomputed from ``frames.csv`` match the
summary exactly.

frames.csv columns::

    stream_id, frame_seq, capture_time, size, resolution, outcome,
    server_completion_time, detection_start, detection_finish,
    feedback_delivery_time, rtt, e2e_latency

epochs.csv columns::

    epoch_index, start_time, max_capacity_bps, estimate_bps, no_data,
    saturated, predicted_bps, encoder_bitrate, primary_bitrate,
    secondary_bitrate, resolution, secondary_active
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .edge import QOS_BUDGET

OK = "ok"
LOST = "lost"
EXPIRED = "expired"
STALE = "stale-dropped"
OUTCOMES = (OK, LOST, EXPIRED, STALE)


def quantize(t: Optional[float]) -> Optional[float]:
    return None if t is None else round(t, 6)


@dataclass
class FrameRecord:
    stream_id: int
    frame_seq: int
    capture_time: float
    size: int = 0
    resolution: str = ""
    outcome: str = LOST
    server_completion_time: Optional[float] = None
    detection_start: Optional[float] = None
    detection_finish: Optional[float] = None
    feedback_delivery_time: Optional[float] = None
    rtt: Optional[float] = None
    e2e_latency: Optional[float] = None

    def complete(self, downlink_delay: float) -> None:
        """Fill derived latencies once every timestamp of the detection path is known."""
        self.rtt = quantize(self.server_completion_time - self.capture_time + downlink_delay)
        self.e2e_latency = quantize(self.feedback_delivery_time - self.capture_time)
        self.outcome = OK


@dataclass
class EpochRecord:
    epoch_index: int
    start_time: float
    max_capacity_bps: float
    estimate_bps: Optional[float] = None
    no_data: Optional[bool] = None
    saturated: Optional[bool] = None
    predicted_bps: Optional[float] = None
    encoder_bitrate: Optional[float] = None
    primary_bitrate: Optional[float] = None
    secondary_bitrate: Optional[float] = None
    resolution: str = ""
    secondary_active: Optional[bool] = None


@dataclass
class Stats:
    count: int = 0
    mean: Optional[float] = None
    median: Optional[float] = None
    p25: Optional[float] = None
    p75: Optional[float] = None
    max: Optional[float] = None
    stddev: Optional[float] = None

    @property
    def iqr(self) -> Optional[float]:
        return None if self.count == 0 else self.p75 - self.p25


@dataclass
class RunSummary:
    frames_total: int
    frames_completed: int
    loss_fraction: float
    rtt: Stats
    e2e: Stats
    detection_time: Stats
    violation_fraction: float
    within_budget_fraction: float
    jitter: Optional[float]
    e2e_cdf: list
    outcomes: dict
    jobs: dict
    stale_feedback: int = 0
    epochs: list = field(default_factory=list)
    label: str = ""
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["rtt"]["iqr"] = self.rtt.iqr
        d["e2e"]["iqr"] = self.e2e.iqr
        return d


def percentile(sorted_values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile of an already sorted, non-empty sequence."""
    if not sorted_values:
        raise ValueError("percentile of empty sequence")
    rank = max(1, math.ceil(p / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


def describe(values: Iterable[float]) -> Stats:
    xs = sorted(values)
    if not xs:
        return Stats()
    return Stats(
        count=len(xs),
        mean=round(statistics.fmean(xs), 9),
        median=percentile(xs, 50),
        p25=percentile(xs, 25),
        p75=percentile(xs, 75),
        max=xs[-1],
        stddev=round(statistics.pstdev(xs), 9),
    )


def cdf_points(values: Iterable[float]) -> list[list[float]]:
    """``[[x, F(x)], ...]`` at each distinct sample value."""
    xs = sorted(values)
    n = len(xs)
    points = []
    for i, x in enumerate(xs, 1):
        if i < n and xs[i] == x:
            continue
        points.append([x, i / n])
    return points


def violation_fraction(latencies: Sequence[float], budget: float = QOS_BUDGET) -> float:
    if not latencies:
        return 0.0
    return sum(1 for x in latencies if x > budget) / len(latencies)


def summarize(records: Sequence[FrameRecord], epochs: Sequence[EpochRecord] = (),
              jobs: Optional[dict] = None, budget: float = QOS_BUDGET, primary_only: bool = True) -> RunSummary:
    pool = [r for r in records if not primary_only or r.stream_id == 0]
    done = [r for r in pool if r.outcome == OK]
    e2e = [r.e2e_latency for r in done]
    rtt = [r.rtt for r in done]
    det = [quantize(r.detection_finish - r.detection_start) for r in done]
    outcomes = {k: sum(1 for r in pool if r.outcome == k) for k in OUTCOMES}
    violations = violation_fraction(e2e, budget)
    rtt_stats = describe(rtt)
    return RunSummary(
        frames_total=len(pool),
        frames_completed=len(done),
        loss_fraction=(outcomes[LOST] + outcomes[EXPIRED]) / len(pool) if pool else 1.0,
        rtt=rtt_stats,
        e2e=describe(e2e),
        detection_time=describe(det),
        violation_fraction=violations,
        within_budget_fraction=(1.0 - violations) if done else 0.0,
        jitter=rtt_stats.stddev,
        e2e_cdf=cdf_points(e2e),
        outcomes=outcomes,
        jobs=dict(jobs or {}),
        epochs=[dataclasses.asdict(e) for e in epochs],
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_text(rows: Sequence, cls) -> str:
    names = [f.name for f in dataclasses.fields(cls)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for row in rows:
        writer.writerow([_fmt(getattr(row, n)) for n in names])
    return buf.getvalue()


def frames_csv(records: Sequence[FrameRecord]) -> str:
    return _csv_text(records, FrameRecord)


def epochs_csv(epochs: Sequence[EpochRecord]) -> str:
    return _csv_text(epochs, EpochRecord)


def summary_json(summary: RunSummary) -> str:
    return json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def export(summary: RunSummary, records: Sequence[FrameRecord], epochs: Sequence[EpochRecord],
           out_dir: str | os.PathLike, formats: Sequence[str] = ("csv", "json")) -> dict[str, Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    written = {}
    if "csv" in formats:
        written["frames"] = out / "frames.csv"
        _write(written["frames"], frames_csv(records))
        written["epochs"] = out / "epochs.csv"
        _write(written["epochs"], epochs_csv(epochs))
    if "json" in formats:
        written["summary"] = out / "summary.json"
        _write(written["summary"], summary_json(summary))
    return written


def read_frames_csv(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
