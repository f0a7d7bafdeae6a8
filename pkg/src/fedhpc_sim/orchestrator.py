"""Event loop tying local training, facility costs and server aggregation together."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import algorithms as alg
from . import hpcsim
from .config import ScenarioConfig
from .errors import ClientBusyError, EmptyLogError
from .params import evaluate, generate_task, local_train, partition_noniid, zeros

METRICS_HEADER = (
    "sim_time_s", "event", "client_id", "global_version", "global_loss", "global_acc",
    "local_loss", "local_steps", "queue_wait_s", "train_s", "transfer_s",
)
LOCAL = "local_round_done"
AGGREGATION = "aggregation"


@dataclass(frozen=True)
class RoundRecord:
    sim_time_s: float
    event: str
    client_id: str
    global_version: int
    global_loss: float
    global_acc: float
    local_loss: float | None = None
    local_steps: int | None = None
    queue_wait_s: float | None = None
    train_s: float | None = None
    transfer_s: float | None = None


@dataclass
class MetricsLog:
    client_ids: list[str]
    records: list[RoundRecord] = field(default_factory=list)
    end_time_s: float = 0.0

    def append(self, rec: RoundRecord) -> None:
        self.records.append(rec)

    @property
    def local_records(self) -> list[RoundRecord]:
        return [r for r in self.records if r.event == LOCAL]

    @property
    def aggregation_records(self) -> list[RoundRecord]:
        return [r for r in self.records if r.event == AGGREGATION]

    def round_counts(self) -> dict[str, int]:
        counts = {c: 0 for c in self.client_ids}
        for r in self.local_records:
            counts[r.client_id] += 1
        return counts

    def summary(self) -> dict:
        return summarize(self)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            for r in self.records:
                w.writerow([_fmt(getattr(r, k)) for k in METRICS_HEADER])


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class _Job:
    steps: int
    base_version: int
    params: np.ndarray
    nodes: int
    queue_wait_s: float
    train_s: float
    upload_s: float
    group_id: int | None = None
    trained: np.ndarray | None = None


@dataclass
class _Client:
    index: int
    profile: hpcsim.FacilityProfile
    initial_steps: int
    job: _Job | None = None
    dispatches: int = 0
    completed: int = 0
    waiting_on_group: bool = False


def stop_check(completed_rounds: int, now: float, config: ScenarioConfig) -> bool:
    """True once the local-round budget is spent or simulated time reaches the wall-clock budget."""
    s = config.schedule
    if s.total_rounds_budget is not None and completed_rounds >= s.total_rounds_budget:
        return True
    if s.wallclock_budget_s is not None and now >= s.wallclock_budget_s:
        return True
    return False


def initial_steps(config: ScenarioConfig) -> list[int]:
    s = config.schedule
    if s.steps_policy == "target_time":
        return [hpcsim.steps_for_round_time(f, s.target_round_s) for f in config.facilities]
    return alg.select_steps_proportional([f.sample_weight for f in config.facilities], s.base_steps)


def expected_round_time(config: ScenarioConfig, steps: Sequence[int]) -> float:
    """Mean over facilities of queue mean + training + both transfers."""
    size = hpcsim.model_size_mb(config.schedule.model_param_count)
    total = 0.0
    for f, q in zip(config.facilities, steps):
        wait = 0.0 if f.reservation else f.queue.median_at(f.nodes) * math.exp(f.queue.sigma ** 2 / 2)
        total += wait + hpcsim.training_duration(f, q) + 2 * hpcsim.transfer_duration(f, size)
    return total / len(config.facilities)


def resolve_algorithm(config: ScenarioConfig) -> alg.AlgorithmConfig:
    """Fill fields the scenario left for derivation (group window = 5% of a round)."""
    a = config.algorithm
    if "group_window" in config.derived_algorithm_fields:
        steps = [a.q_max] * len(config.facilities)
        a = replace(a, group_window=0.05 * expected_round_time(config, steps))
    return a


class Simulation:
    """One deterministic federated run over simulated facilities."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.cfg = resolve_algorithm(config)
        t = config.task
        self.task = generate_task(t.n_features, t.n_classes, t.noise_sigma, config.seed)
        weights = [f.sample_weight for f in config.facilities]
        ids = config.client_ids
        self.train = partition_noniid(self.task, weights, t.train_samples, t.skew, [config.seed, 1], ids)
        self.test = partition_noniid(self.task, weights, t.test_samples, t.skew, [config.seed, 2], ids)
        self.clock = hpcsim.SimClock([config.seed, 3])
        self.size_mb = hpcsim.model_size_mb(config.schedule.model_param_count)

        steps = initial_steps(config)
        self.clients = {f.name: _Client(i, f, q) for i, (f, q) in enumerate(zip(config.facilities, steps))}
        self.state = alg.ServerState(alg.GlobalModel(zeros(t.n_features, t.n_classes), 0))
        for c in self.clients.values():
            f = c.profile
            self.state.overheads[f.name] = f.init_overhead_s + hpcsim.transfer_duration(f, self.size_mb)
            # nominal speed from the facility profile, replaced by the first real observation
            self.state.speeds[f.name] = alg.SpeedEstimate(f.name, hpcsim.seconds_per_step(f), 0)

        self.log = MetricsLog(ids)
        self.global_eval = evaluate(self.state.model.params, self.test)
        self.dispatched = 0
        self.completed = 0
        self.round_pending: dict[str, alg.ClientUpdate] = {}
        self.round_expected = 0
        self.buffer_members: list[str] = []
        self.halted_at: float | None = None

    # -- helpers -------------------------------------------------------------

    @property
    def budget(self) -> int | None:
        return self.config.schedule.total_rounds_budget

    def _can_dispatch(self) -> bool:
        return self.budget is None or self.dispatched < self.budget

    def _busy(self) -> bool:
        if any(c.job is not None for c in self.clients.values()):
            return True
        return any(g.buffered_updates for g in self.state.open_groups())

    def _record_aggregation(self, contributors: Iterable[str]) -> None:
        if self.config.schedule.eval_every_aggregation:
            self.global_eval = evaluate(self.state.model.params, self.test)
        else:
            self.global_eval = (math.nan, math.nan)
        loss, acc = self.global_eval
        self.log.append(RoundRecord(
            sim_time_s=self.clock.now, event=AGGREGATION, client_id="+".join(contributors),
            global_version=self.state.version, global_loss=loss, global_acc=acc,
        ))

    def _send_model(self, client_id: str) -> None:
        c = self.clients[client_id]
        c.waiting_on_group = False
        if self._can_dispatch():
            self.clock.schedule(hpcsim.transfer_duration(c.profile, self.size_mb), "download_done", client_id)

    # -- dispatch ------------------------------------------------------------

    def dispatch_client(self, client_id: str, now: float | None = None) -> _Job:
        """Start one local round: queue, train, upload, each a chained event."""
        c = self.clients[client_id]
        if c.job is not None or c.waiting_on_group:
            raise ClientBusyError(f"client {client_id} is busy")
        f = c.profile
        rng = self.clock.rng
        group_id = None
        if self.cfg.kind == "fedcompass":
            steps, group_id = alg.compass_assign(self.state, client_id, self.clock.now, self.cfg)
            group = self.state.groups[group_id]
            if group.created_at == self.clock.now and group.member_ids == {client_id}:
                deadline = group.target_arrival + self.cfg.group_window - self.clock.now
                self.clock.schedule(max(deadline, 0.0), "aggregation", detail=f"deadline:{group_id}", payload=group_id)
        else:
            steps = c.initial_steps

        first = c.dispatches == 0
        if f.reservation or (self.config.schedule.persistent_allocation and not first):
            wait = 0.0
        else:
            wait = hpcsim.sample_queue_wait(f.queue, f.nodes, rng)
        nodes = f.nodes
        if f.node_failure_prob > 0 and nodes > 1 and rng.random() < f.node_failure_prob:
            nodes -= 1

        job = _Job(
            steps=steps,
            base_version=self.state.version,
            params=self.state.model.params.copy(),
            nodes=nodes,
            queue_wait_s=wait,
            train_s=hpcsim.training_duration(f, steps, nodes),
            upload_s=hpcsim.transfer_duration(f, self.size_mb),
            group_id=group_id,
        )
        self.state.snapshots[client_id] = job.params
        c.job = job
        c.dispatches += 1
        self.dispatched += 1
        self.clock.schedule(0.0, "job_submitted", client_id, detail=f"steps={steps}")
        return job

    # -- event handlers ------------------------------------------------------

    def _on_submitted(self, ev: hpcsim.SimEvent) -> None:
        job = self.clients[ev.client_id].job
        self.clock.schedule(job.queue_wait_s, "job_started", ev.client_id)

    def _on_started(self, ev: hpcsim.SimEvent) -> None:
        job = self.clients[ev.client_id].job
        self.clock.schedule(job.train_s, "training_done", ev.client_id)

    def _on_trained(self, ev: hpcsim.SimEvent) -> None:
        c = self.clients[ev.client_id]
        job = c.job
        seed = [self.config.seed, 4, c.index, c.dispatches]
        job.trained = local_train(job.params, self.train[c.index], job.steps, self.config.trainer, seed)
        c.completed += 1
        self.completed += 1
        local_loss, _ = evaluate(job.trained, self.test)
        gl, ga = self.global_eval
        self.log.append(RoundRecord(
            sim_time_s=self.clock.now, event=LOCAL, client_id=ev.client_id,
            global_version=self.state.version, global_loss=gl, global_acc=ga,
            local_loss=local_loss, local_steps=job.steps, queue_wait_s=job.queue_wait_s,
            train_s=job.train_s, transfer_s=job.upload_s,
        ))
        self.clock.schedule(job.upload_s, "upload_done", ev.client_id)

    def _on_uploaded(self, ev: hpcsim.SimEvent) -> None:
        cid = ev.client_id
        c = self.clients[cid]
        job = c.job
        c.job = None
        update = alg.ClientUpdate(
            client_id=cid, params=job.trained, base_version=job.base_version,
            sample_count=self.train[c.index].sample_count, local_steps=job.steps,
            completion_time=self.clock.now,
        )
        kind = self.cfg.kind
        if kind == "fedavg":
            self.round_pending[cid] = update
            if len(self.round_pending) < self.round_expected:
                return
            ups = [self.round_pending[k] for k in sorted(self.round_pending, key=lambda k: self.clients[k].index)]
            self.round_pending.clear()
            self.state.model = alg.GlobalModel(alg.fedavg_aggregate(ups), self.state.version + 1)
            self._record_aggregation(u.client_id for u in ups)
            self._start_fedavg_round()
        elif kind == "fedasync":
            self.state.model = alg.fedasync_apply(self.state.model, update, self.cfg)
            self._record_aggregation([cid])
            self._send_model(cid)
        elif kind == "fedbuff":
            self.buffer_members.append(cid)
            if alg.fedbuff_ingest(self.state, update, self.cfg) is not None:
                self._record_aggregation(self.buffer_members)
                self.buffer_members = []
            self._send_model(cid)
        else:
            observed = (job.train_s - c.profile.init_overhead_s) / job.steps
            self.state.speeds[cid] = alg.update_speed(self.state.speeds[cid], observed, self.cfg.speed_smoothing)
            group = self.state.groups[job.group_id]
            was_closed = group.closed
            c.waiting_on_group = True
            if alg.compass_ingest(self.state, update, self.clock.now, self.cfg, job.group_id) is not None:
                if was_closed:
                    self._record_aggregation([cid])
                    self._send_model(cid)
                else:
                    self._finish_group(group)

    def _finish_group(self, group: alg.CompassGroup) -> None:
        members = [u.client_id for u in group.buffered_updates]
        self._record_aggregation(members)
        for m in sorted(members, key=lambda k: self.clients[k].index):
            self._send_model(m)

    def _on_aggregation_timer(self, ev: hpcsim.SimEvent) -> None:
        group = self.state.groups[ev.payload]
        if alg.compass_deadline(self.state, ev.payload, self.cfg) is not None:
            self._finish_group(group)

    def _on_downloaded(self, ev: hpcsim.SimEvent) -> None:
        if self._can_dispatch():
            self.dispatch_client(ev.client_id)

    def _start_fedavg_round(self) -> None:
        order = sorted(self.clients.values(), key=lambda c: c.index)
        n = len(order) if self.budget is None else min(len(order), self.budget - self.dispatched)
        self.round_expected = max(n, 0)
        for c in order[:self.round_expected]:
            # reserve the budget now so every member of the round gets its slot
            self.clock.schedule(hpcsim.transfer_duration(c.profile, self.size_mb), "download_done", c.profile.name)

    # -- main loop -----------------------------------------------------------

    def run(self) -> MetricsLog:
        handlers = {
            "job_submitted": self._on_submitted,
            "job_started": self._on_started,
            "training_done": self._on_trained,
            "upload_done": self._on_uploaded,
            "download_done": self._on_downloaded,
            "aggregation": self._on_aggregation_timer,
        }
        order = sorted(self.clients.values(), key=lambda c: c.index)
        if self.cfg.kind == "fedavg":
            self.round_expected = len(order) if self.budget is None else min(len(order), self.budget)
            order = order[:self.round_expected]
        for c in order:
            if self._can_dispatch():
                self.dispatch_client(c.profile.name)

        wall = self.config.schedule.wallclock_budget_s
        while len(self.clock):
            if wall is not None and self.clock.peek_time() >= wall:
                self.halted_at = wall
                break
            ev = self.clock.next_event()
            handlers[ev.kind](ev)
            if stop_check(self.completed, self.clock.now, self.config) and not self._busy():
                break

        if not self.config.schedule.eval_every_aggregation and self.log.aggregation_records:
            loss, acc = evaluate(self.state.model.params, self.test)
            last = max(i for i, r in enumerate(self.log.records) if r.event == AGGREGATION)
            self.log.records[last] = replace(self.log.records[last], global_loss=loss, global_acc=acc)
        self.log.end_time_s = self.clock.now
        return self.log


def run_scenario(config: ScenarioConfig, trace: list | None = None) -> MetricsLog:
    sim = Simulation(config)
    log = sim.run()
    if trace is not None:
        trace.extend(sim.clock.trace)
    return log


def final_local_losses(log: MetricsLog) -> dict[str, float]:
    out = {}
    for r in log.local_records:
        out[r.client_id] = r.local_loss
    return out


def summarize(log: MetricsLog) -> dict:
    if not log.records:
        raise EmptyLogError("cannot summarize an empty log")
    counts = log.round_counts()
    aggs = log.aggregation_records
    last = aggs[-1] if aggs else log.records[-1]
    return {
        "round_counts": counts,
        "total_local_rounds": sum(counts.values()),
        "aggregations": len(aggs),
        "final_global_version": last.global_version,
        "final_global_loss": last.global_loss,
        "final_global_acc": last.global_acc,
        "last_aggregation_s": aggs[-1].sim_time_s if aggs else None,
        "final_local_loss": final_local_losses(log),
        "total_sim_time_s": log.end_time_s,
    }


def relative_improvement(loss: float, baseline: float) -> float:
    """Relative loss reduction of ``loss`` upon ``baseline``."""
    return 1.0 - loss / baseline


def improvement_matrix(final_losses: Mapping[str, float]) -> dict[str, dict[str, float]]:
    """``m[a][b]`` is how much run ``a`` improves on run ``b``; the diagonal is zero."""
    return {
        a: {b: (0.0 if a == b else relative_improvement(la, lb)) for b, lb in final_losses.items()}
        for a, la in final_losses.items()
    }


def summary_text(summary: Mapping) -> str:
    return json.dumps(summary, indent=2) + "\n"
