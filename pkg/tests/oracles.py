"""Independent reference models used by the tests.

Nothing here imports the package under test beyond plain data; each model
is written the slow, obvious way so it can be trusted on small inputs.
"""

from __future__ import annotations


def _capacity(segments, t):
    c = segments[0][1]
    for start, cap in segments:
        if start <= t:
            c = cap
    return c


def _next_boundary(segments, t):
    later = [s for s, _ in segments if s > t]
    return min(later) if later else float("inf")


def per_bit_link(arrivals, segments, prop_delay, queue_limit):
    """Brute-force FIFO tail-drop bottleneck, one bit at a time.

    ``arrivals`` is a list of ``(time, size_bytes)`` in offer order.
    Returns a list with the delivery time of each packet, or ``None`` when
    it was dropped. A packet occupies the queue until its last bit leaves.
    """
    accepted = []  # (departure, size)
    server_free = 0.0
    out = []
    for t_arr, size in arrivals:
        occupancy = sum(sz for dep, sz in accepted if dep > t_arr)
        if occupancy + size > queue_limit:
            out.append(None)
            continue
        t = max(t_arr, server_free)
        for _ in range(8 * size):
            remaining = 1.0
            while remaining > 1e-12:
                cap = _capacity(segments, t)
                end = _next_boundary(segments, t)
                dt = remaining / cap
                if t + dt <= end:
                    t += dt
                    remaining = 0.0
                else:
                    remaining -= (end - t) * cap
                    t = end
        server_free = t
        accepted.append((t, size))
        out.append(t + prop_delay)
    return out


def epoch_throughput(arrivals, epoch_length, n_epochs):
    """Bits per second per epoch from ``(time, bytes)`` pairs, by direct binning."""
    totals = [0] * n_epochs
    for t, nbytes in arrivals:
        k = 0
        while (k + 1) * epoch_length <= t:
            k += 1
        if k < n_epochs:
            totals[k] += nbytes
    return [8.0 * b / epoch_length for b in totals]
