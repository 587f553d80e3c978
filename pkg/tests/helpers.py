"""Builders shared by unit and acceptance tests."""

from __future__ import annotations

from edgestream.estimator import Estimator
from edgestream.netem import CapacitySchedule, EventKind, Link, LinkParams
from edgestream.scenario import load_scenario

PACKET = 1220


def cbr_estimates(rate_bps, capacity_bps, duration=6.0, epoch=1.0, packet=PACKET):
    """Push constant-bit-rate packets through the link and estimate each epoch.

    Returns ``(estimates, delivered)`` where ``delivered`` is a list of
    ``(arrival_time, bytes)`` at the server.
    """
    link = Link(CapacitySchedule.constant(capacity_bps), LinkParams())
    est = Estimator(epoch)
    gap = 8 * packet / rate_bps
    n = int(duration / gap)
    delivered = []
    for i in range(n):
        t = i * gap
        for ev in link.advance(t):
            delivered.append((ev.deliver_time, ev.size))
        link.offer(i, packet, t)
    for ev in link.advance(duration + 10):
        delivered.append((ev.deliver_time, ev.size))
    delivered.sort()
    estimates = []
    boundary = epoch
    for t, size in delivered:
        while t >= boundary - 1e-12 and boundary <= duration:
            estimates.append(est.finalize_epoch(boundary))
            boundary += epoch
        if boundary > duration:
            break
        est.observe(size, t)
    while boundary <= duration + 1e-9:
        estimates.append(est.finalize_epoch(boundary))
        boundary += epoch
    return estimates, delivered


def constant(capacity_bps, run_length=20.0, **values):
    """paper-default with a constant-capacity schedule."""
    base = load_scenario("paper-default")
    values.setdefault("name", f"const-{capacity_bps / 1e6:g}M")
    return base.with_values(link__schedule=CapacitySchedule.constant(capacity_bps), run_length=run_length, **values)
