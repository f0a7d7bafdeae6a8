"""Server-side aggregation for FedAvg, FedAsync, FedBuff and FedCompass.

All functions treat :class:`ServerState` as single-owner mutable state; the
orchestrator's event loop is the only caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError, MixedVersionError, StalenessError, UnknownGroupError
from .params import ParamVector, assert_finite

ALGORITHMS = ("fedavg", "fedasync", "fedbuff", "fedcompass")


@dataclass(frozen=True)
class ClientUpdate:
    client_id: str
    params: ParamVector
    base_version: int
    sample_count: int
    local_steps: int
    completion_time: float = 0.0


@dataclass(frozen=True)
class GlobalModel:
    params: ParamVector
    version: int = 0


@dataclass(frozen=True)
class AlgorithmConfig:
    kind: str = "fedavg"
    alpha: float = 0.6
    staleness_exponent: float = 0.5
    buffer_size: int = 2
    q_min: int = 10
    q_max: int = 100
    group_window: float = 60.0
    server_lr: float = 1.0
    speed_smoothing: float = 0.5
    weight_by_samples: bool = True

    def __post_init__(self):
        if self.kind not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.kind!r}; valid: {', '.join(ALGORITHMS)}")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if self.staleness_exponent < 0:
            raise ValueError("staleness_exponent must be nonnegative")
        if self.buffer_size < 1:
            raise ValueError("buffer_size must be >= 1")
        if not 1 <= self.q_min <= self.q_max:
            raise ValueError("need 1 <= q_min <= q_max")
        if not self.group_window > 0:
            raise ValueError("group_window must be positive")
        if not self.server_lr > 0:
            raise ValueError("server_lr must be positive")
        if not 0 < self.speed_smoothing <= 1:
            raise ValueError("speed_smoothing must be in (0, 1]")


@dataclass(frozen=True)
class SpeedEstimate:
    client_id: str
    seconds_per_step: float = 0.0
    observations: int = 0


@dataclass
class CompassGroup:
    group_id: int
    member_ids: set[str]
    target_arrival: float
    buffered_updates: list[ClientUpdate] = field(default_factory=list)
    created_at: float = 0.0
    closed: bool = False

    @property
    def complete(self) -> bool:
        return {u.client_id for u in self.buffered_updates} >= self.member_ids


@dataclass
class ServerState:
    """Everything the server remembers between events."""

    model: GlobalModel
    speeds: dict[str, SpeedEstimate] = field(default_factory=dict)
    # per-client fixed latency around compute (init + transfer), used by compass_assign
    overheads: dict[str, float] = field(default_factory=dict)
    # global params at each client's dispatch, FedBuff deltas are taken against these
    snapshots: dict[str, ParamVector] = field(default_factory=dict)
    buffer: list[ParamVector] = field(default_factory=list)
    groups: dict[int, CompassGroup] = field(default_factory=dict)
    next_group_id: int = 0

    @property
    def version(self) -> int:
        return self.model.version

    def open_groups(self) -> list[CompassGroup]:
        return [g for g in self.groups.values() if not g.closed]

    def group_of(self, client_id: str) -> CompassGroup | None:
        for g in self.open_groups():
            if client_id in g.member_ids:
                return g
        return None


def _check_dims(a: ParamVector, b: ParamVector) -> None:
    if np.shape(a) != np.shape(b):
        raise DimensionMismatchError(f"dimension mismatch: {np.shape(a)} vs {np.shape(b)}")


def weighted_mean(params: Sequence[ParamVector], weights: Sequence[float]) -> ParamVector:
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    out = np.zeros_like(np.asarray(params[0], dtype=float))
    for wi, p in zip(w, params):
        out += wi * p
    return out


def fedavg_aggregate(updates: Sequence[ClientUpdate]) -> ParamVector:
    """Sample-count-weighted mean of a synchronous round's client params."""
    if not updates:
        raise ValueError("fedavg_aggregate needs at least one update")
    versions = {u.base_version for u in updates}
    if len(versions) > 1:
        raise MixedVersionError(f"updates span base versions {sorted(versions)}")
    for u in updates[1:]:
        _check_dims(updates[0].params, u.params)
    if len(updates) == 1:
        return np.array(updates[0].params, dtype=float, copy=True)
    return assert_finite(weighted_mean([u.params for u in updates], [u.sample_count for u in updates]))


def staleness_factor(staleness: int, exponent: float) -> float:
    """Polynomial decay ``(staleness + 1) ** -exponent``."""
    if staleness < 0:
        raise StalenessError(f"negative staleness {staleness}")
    if staleness == 0 or exponent == 0:
        return 1.0
    return float((staleness + 1) ** (-exponent))


def _staleness(version: int, base_version: int) -> int:
    s = version - base_version
    if s < 0:
        raise StalenessError(f"update base version {base_version} is ahead of global version {version}")
    return s


def mix(global_model: GlobalModel, params: ParamVector, base_version: int, cfg: AlgorithmConfig) -> GlobalModel:
    _check_dims(global_model.params, params)
    s = _staleness(global_model.version, base_version)
    a = cfg.alpha * staleness_factor(s, cfg.staleness_exponent)
    new = (1.0 - a) * global_model.params + a * np.asarray(params, dtype=float)
    return GlobalModel(assert_finite(new), global_model.version + 1)


def fedasync_apply(global_model: GlobalModel, update: ClientUpdate, cfg: AlgorithmConfig) -> GlobalModel:
    return mix(global_model, update.params, update.base_version, cfg)


def fedbuff_ingest(state: ServerState, update: ClientUpdate, cfg: AlgorithmConfig) -> GlobalModel | None:
    """Buffer a staleness-weighted delta; apply the buffer mean once it is full.

    The weight is ``staleness_factor`` alone. ``cfg.alpha`` is a FedAsync
    mixing rate and plays no part here; ``cfg.server_lr`` scales the step.
    """
    base = state.snapshots.get(update.client_id)
    if base is None:
        base = state.model.params
    _check_dims(base, update.params)
    _check_dims(state.model.params, update.params)
    s = _staleness(state.version, update.base_version)
    weight = staleness_factor(s, cfg.staleness_exponent)
    state.buffer.append(weight * (np.asarray(update.params, dtype=float) - base))
    if len(state.buffer) < cfg.buffer_size:
        return None
    step = np.mean(state.buffer, axis=0)
    state.buffer.clear()
    state.model = GlobalModel(assert_finite(state.model.params + cfg.server_lr * step), state.version + 1)
    return state.model


def update_speed(est: SpeedEstimate, observed_seconds_per_step: float, smoothing: float) -> SpeedEstimate:
    if not observed_seconds_per_step > 0:
        raise ValueError(f"observed seconds per step must be positive, got {observed_seconds_per_step}")
    if not 0 < smoothing <= 1:
        raise ValueError("smoothing must be in (0, 1]")
    if est.observations == 0:
        sps = float(observed_seconds_per_step)
    else:
        sps = (1.0 - smoothing) * est.seconds_per_step + smoothing * observed_seconds_per_step
    return SpeedEstimate(est.client_id, sps, est.observations + 1)


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def compass_assign(state: ServerState, client_id: str, now: float, cfg: AlgorithmConfig) -> tuple[int, int]:
    """Pick a step count so ``client_id`` lands with an open group, or start a new group.

    Returns ``(local_steps, group_id)``. A client with no usable speed
    estimate gets ``q_max`` steps in a fresh group.
    """
    if state.group_of(client_id) is not None:
        raise ValueError(f"client {client_id} is already assigned to an open group")
    overhead = state.overheads.get(client_id, 0.0)
    est = state.speeds.get(client_id)
    sps = est.seconds_per_step if est is not None else 0.0

    if sps > 0:
        for g in sorted(state.open_groups(), key=lambda g: g.group_id):
            steps = _round_half_up((g.target_arrival - now - overhead) / sps)
            if cfg.q_min <= steps <= cfg.q_max:
                g.member_ids.add(client_id)
                return steps, g.group_id

    gid = state.next_group_id
    state.next_group_id += 1
    target = now + overhead + cfg.q_max * sps
    state.groups[gid] = CompassGroup(gid, {client_id}, target, created_at=now)
    return cfg.q_max, gid


def _aggregate_group(state: ServerState, group: CompassGroup, cfg: AlgorithmConfig) -> GlobalModel:
    ups = group.buffered_updates
    if cfg.weight_by_samples:
        weights = [u.sample_count for u in ups]
    else:
        weights = [1.0] * len(ups)
    for u in ups[1:]:
        _check_dims(ups[0].params, u.params)
    mean = weighted_mean([u.params for u in ups], weights) if len(ups) > 1 else ups[0].params
    base = min(u.base_version for u in ups)
    state.model = mix(state.model, mean, base, cfg)
    group.closed = True
    return state.model


def compass_ingest(
    state: ServerState, update: ClientUpdate, now: float, cfg: AlgorithmConfig, group_id: int | None = None
) -> GlobalModel | None:
    """Buffer ``update`` in its arrival group and aggregate the group when due.

    A group is due when every member has reported or ``now`` is past
    ``target_arrival + group_window``. An update whose group already closed
    on timeout is applied on its own as a fresh single-member group.
    """
    if group_id is None:
        group = state.group_of(update.client_id)
        if group is None:
            raise UnknownGroupError(f"client {update.client_id} has no open group")
    else:
        if group_id not in state.groups:
            raise UnknownGroupError(f"unknown group {group_id}")
        group = state.groups[group_id]
        if update.client_id not in group.member_ids:
            raise UnknownGroupError(f"client {update.client_id} is not a member of group {group_id}")
    _check_dims(state.model.params, update.params)

    if group.closed:
        late = CompassGroup(state.next_group_id, {update.client_id}, now, [update], created_at=now)
        state.next_group_id += 1
        state.groups[late.group_id] = late
        return _aggregate_group(state, late, cfg)

    group.buffered_updates.append(update)
    if group.complete or now > group.target_arrival + cfg.group_window:
        return _aggregate_group(state, group, cfg)
    return None


def compass_deadline(state: ServerState, group_id: int, cfg: AlgorithmConfig) -> GlobalModel | None:
    """Timer path: aggregate whatever a group holds once its window has passed."""
    group = state.groups.get(group_id)
    if group is None:
        raise UnknownGroupError(f"unknown group {group_id}")
    if group.closed or not group.buffered_updates:
        return None
    return _aggregate_group(state, group, cfg)


def select_steps_proportional(sample_counts: Sequence[int], base_steps: int) -> list[int]:
    """``max(1, round(base_steps * n_i / max n))`` per client."""
    if any(n <= 0 for n in sample_counts):
        raise ValueError("sample counts must be positive")
    top = max(sample_counts)
    return [max(1, _round_half_up(base_steps * n / top)) for n in sample_counts]
