"""Discrete-event clock and facility cost models.

Sizes are decimal megabytes (10**6 bytes) throughout.
"""

from __future__ import annotations

import bisect
import csv
import heapq
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import EmptyQueueError

EVENT_KINDS = ("job_submitted", "job_started", "training_done", "upload_done", "download_done", "aggregation")
BYTES_PER_PARAM = 2  # bf16
TRACE_HEADER = ("time_s", "sequence", "kind", "client_id", "detail")


def _loglog_interp(points: Sequence[tuple[float, float]], x: float) -> float:
    xs = [p[0] for p in points]
    i = bisect.bisect_left(xs, x)
    if i < len(xs) and xs[i] == x:
        return float(points[i][1])
    (x0, y0), (x1, y1) = points[i - 1], points[i]
    t = (math.log(x) - math.log(x0)) / (math.log(x1) - math.log(x0))
    return float(math.exp(math.log(y0) + t * (math.log(y1) - math.log(y0))))


@dataclass(frozen=True)
class QueueModel:
    """Lognormal batch-queue wait with a node-count multiplier on the median."""

    median_s: float
    sigma: float
    node_scaling: tuple[tuple[float, float], ...] = ((1, 1.0),)

    def __post_init__(self):
        if not self.median_s > 0:
            raise ValueError("queue median_s must be positive")
        if self.sigma < 0:
            raise ValueError("queue sigma must be nonnegative")
        pts = tuple((float(n), float(m)) for n, m in self.node_scaling)
        if not pts:
            raise ValueError("node_scaling must be nonempty")
        if any(m <= 0 for _, m in pts):
            raise ValueError("node_scaling multipliers must be positive")
        if any(b[0] <= a[0] for a, b in zip(pts, pts[1:])):
            raise ValueError("node_scaling nodes must be strictly increasing")
        if any(b[1] < a[1] for a, b in zip(pts, pts[1:])):
            raise ValueError("node_scaling multipliers must be nondecreasing")
        object.__setattr__(self, "node_scaling", pts)

    def multiplier(self, nodes: float) -> float:
        """Log-log interpolated multiplier, held flat outside the table."""
        pts = self.node_scaling
        if nodes <= pts[0][0]:
            return pts[0][1]
        if nodes >= pts[-1][0]:
            return pts[-1][1]
        return _loglog_interp(pts, nodes)

    def median_at(self, nodes: float) -> float:
        return self.median_s * self.multiplier(nodes)


@dataclass(frozen=True)
class FacilityProfile:
    name: str
    nodes: int
    gpus_per_node: int
    micro_batch: int
    throughput_points: tuple[tuple[float, float], ...]
    queue: QueueModel
    init_overhead_s: float = 0.0
    rtt_ms: float = 0.0
    bandwidth_asymptote_mb_s: float = 1000.0
    bandwidth_halfsize_mb: float = 1.0
    reservation: bool = False
    sample_weight: float = 1.0
    node_failure_prob: float = 0.0

    def __post_init__(self):
        pts = tuple((float(n), float(t)) for n, t in self.throughput_points)
        if not pts:
            raise ValueError("throughput_points must be nonempty")
        if any(t <= 0 or n <= 0 for n, t in pts):
            raise ValueError("throughput calibration points must be positive")
        if any(b[0] <= a[0] for a, b in zip(pts, pts[1:])):
            raise ValueError("throughput_points must be strictly increasing in nodes")
        object.__setattr__(self, "throughput_points", pts)
        if min(self.nodes, self.gpus_per_node, self.micro_batch) < 1:
            raise ValueError("nodes, gpus_per_node and micro_batch must be >= 1")
        if self.init_overhead_s < 0 or self.rtt_ms < 0:
            raise ValueError("init_overhead_s and rtt_ms must be nonnegative")
        if not (self.bandwidth_asymptote_mb_s > 0 and self.bandwidth_halfsize_mb > 0):
            raise ValueError("bandwidth parameters must be positive")
        if not 0 <= self.node_failure_prob <= 1:
            raise ValueError("node_failure_prob must be in [0, 1]")

    @property
    def total_gpus(self) -> int:
        return self.nodes * self.gpus_per_node

    @property
    def effective_batch(self) -> int:
        return self.nodes * self.gpus_per_node * self.micro_batch


def throughput(profile: FacilityProfile, nodes: float) -> float:
    """Samples per second at ``nodes``, interpolated in log-log space.

    Linear in nodes below the first calibration point, flat above the last.
    """
    if nodes < 1:
        raise ValueError("nodes must be >= 1")
    pts = profile.throughput_points
    if nodes <= pts[0][0]:
        return pts[0][1] * nodes / pts[0][0]
    if nodes >= pts[-1][0]:
        return pts[-1][1]
    return _loglog_interp(pts, nodes)


def seconds_per_step(profile: FacilityProfile, nodes: int | None = None) -> float:
    n = profile.nodes if nodes is None else nodes
    batch = n * profile.gpus_per_node * profile.micro_batch
    return batch / throughput(profile, n)


def training_duration(profile: FacilityProfile, local_steps: int, nodes: int | None = None) -> float:
    """Init overhead plus ``local_steps`` effective batches at the facility's throughput."""
    if local_steps < 1:
        raise ValueError("local_steps must be >= 1")
    return profile.init_overhead_s + local_steps * seconds_per_step(profile, nodes)


def steps_for_round_time(profile: FacilityProfile, target_round_s: float) -> int:
    """Local steps that fill ``target_round_s`` once init overhead is paid."""
    compute = target_round_s - profile.init_overhead_s
    return max(1, math.floor(compute / seconds_per_step(profile) + 0.5))


def sample_queue_wait(queue: QueueModel, nodes: float, rng: np.random.Generator, reservation: bool = False) -> float:
    """One queue wait draw; zero under a reservation (no rng draw is made then)."""
    if nodes < 1:
        raise ValueError("nodes must be >= 1")
    if reservation:
        return 0.0
    median = queue.median_at(nodes)
    if queue.sigma == 0:
        return median
    return float(median * math.exp(queue.sigma * rng.standard_normal()))


def model_size_mb(param_count: float) -> float:
    if param_count < 0:
        raise ValueError("param_count must be nonnegative")
    return param_count * BYTES_PER_PARAM / 1e6


def effective_bandwidth(profile: FacilityProfile, size_mb: float) -> float:
    """Saturating MB/s: connection setup is amortized as payloads grow."""
    return profile.bandwidth_asymptote_mb_s * size_mb / (size_mb + profile.bandwidth_halfsize_mb)


def transfer_duration(profile: FacilityProfile, size_mb: float) -> float:
    if size_mb < 0:
        raise ValueError("size_mb must be nonnegative")
    latency = profile.rtt_ms / 1000.0
    if size_mb == 0:
        return latency
    # size / (A * s / (s + h)) simplifies to (s + h) / A
    return latency + (size_mb + profile.bandwidth_halfsize_mb) / profile.bandwidth_asymptote_mb_s


@dataclass(frozen=True)
class SimEvent:
    time: float
    sequence: int
    kind: str
    client_id: str = ""
    detail: str = ""
    payload: Any = field(default=None, compare=False)


class SimClock:
    """Deterministic event queue ordered by ``(time, sequence)``."""

    def __init__(self, seed: int = 0):
        self.now = 0.0
        self.rng = np.random.default_rng(seed)
        self._queue: list[tuple[float, int, SimEvent]] = []
        self._seq = 0
        self.trace: list[SimEvent] = []

    def __len__(self):
        return len(self._queue)

    def schedule(self, delay_s: float, kind: str, client_id: str = "", detail: str = "", payload: Any = None) -> SimEvent:
        if delay_s < 0 or math.isnan(delay_s):
            raise ValueError(f"delay must be nonnegative, got {delay_s}")
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        ev = SimEvent(self.now + delay_s, self._seq, kind, client_id, detail, payload)
        self._seq += 1
        heapq.heappush(self._queue, (ev.time, ev.sequence, ev))
        return ev

    def peek_time(self) -> float:
        if not self._queue:
            raise EmptyQueueError("event queue is empty")
        return self._queue[0][0]

    def next_event(self) -> SimEvent:
        if not self._queue:
            raise EmptyQueueError("event queue is empty")
        _, _, ev = heapq.heappop(self._queue)
        self.now = ev.time
        self.trace.append(ev)
        return ev


def schedule(clock: SimClock, delay_s: float, event: SimEvent | str, **kw) -> SimEvent:
    """Functional alias for :meth:`SimClock.schedule`; accepts a kind or a template event."""
    if isinstance(event, SimEvent):
        return clock.schedule(delay_s, event.kind, event.client_id, event.detail, event.payload)
    return clock.schedule(delay_s, event, **kw)


def next_event(clock: SimClock) -> SimEvent:
    return clock.next_event()


def write_trace_csv(events: Sequence[SimEvent], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for ev in events:
            w.writerow([repr(float(ev.time)), ev.sequence, ev.kind, ev.client_id, ev.detail])
