"""Scenario configuration: JSON files, schema validation and the shipped scenarios."""

from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .algorithms import ALGORITHMS, AlgorithmConfig
from .errors import ConfigError
from .hpcsim import FacilityProfile, QueueModel
from .params import TrainerConfig

# Calibration curves, samples/s by node count. Only the 64-node
# values are measured anchors; the intermediate points are smooth fills.
THROUGHPUT_CURVES = {
    "Aurora": [[1, 34], [2, 68], [4, 135], [8, 268], [16, 532], [32, 1060], [64, 2100]],
    "Perlmutter-80": [[1, 24], [2, 47], [4, 92], [8, 180], [16, 350], [32, 660], [64, 1200]],
    "Frontier": [[1, 20], [2, 39], [4, 76], [8, 148], [16, 285], [32, 540], [64, 1000]],
    "Polaris": [[1, 14], [2, 26], [4, 48], [8, 85], [16, 140], [32, 205], [64, 250]],
    "Perlmutter-40": [[1, 14], [2, 27], [4, 50], [8, 88], [16, 145], [32, 210], [64, 252]],
}

# Multiplier on the 1-node queue median; with a 50 s base, 64 nodes lands at 100 h.
QUEUE_NODE_SCALING = [[1, 1], [2, 1], [4, 2], [8, 6], [16, 40], [32, 400], [64, 7200]]

# (name, gpus/node, micro batch, FL sample weight, rtt ms, bw asymptote MB/s, bw half-size MB, curve)
_FACILITIES = [
    ("Polaris", 4, 6, 78319, 0.210, 420.0, 4000.0, "Polaris"),
    ("Aurora", 12, 8, 1925903, 0.266, 450.0, 4000.0, "Aurora"),
    ("Frontier", 8, 8, 120565, 17.281, 300.0, 3500.0, "Frontier"),
    ("Perlmutter", 4, 6, 1217627, 45.205, 220.0, 3000.0, "Perlmutter-40"),
]

ROOT_KEYS = {"name", "seed", "notes", "algorithm", "task", "trainer", "schedule", "facilities", "calibration"}
ALGO_KEYS = {"kind", "alpha", "staleness_exponent", "buffer_size", "q_min", "q_max", "group_window",
             "server_lr", "speed_smoothing", "weight_by_samples"}
TASK_KEYS = {"n_features", "n_classes", "noise_sigma", "train_samples", "test_samples", "skew"}
TRAINER_KEYS = {"learning_rate", "micro_batch", "momentum", "l2"}
SCHEDULE_KEYS = {"base_steps", "steps_policy", "target_round_s", "total_rounds_budget", "wallclock_budget_s",
                 "persistent_allocation", "model_param_count", "eval_every_aggregation"}
FACILITY_KEYS = {"name", "nodes", "gpus_per_node", "micro_batch", "sample_weight", "throughput_points",
                 "init_overhead_s", "rtt_ms", "bandwidth_asymptote_mb_s", "bandwidth_halfsize_mb",
                 "reservation", "node_failure_prob", "queue", "notes"}
QUEUE_KEYS = {"median_s", "sigma", "node_scaling"}


@dataclass(frozen=True)
class TaskSpec:
    n_features: int = 99
    n_classes: int = 50
    noise_sigma: float = 3.0
    train_samples: int = 6000
    test_samples: int = 2000
    skew: float = 0.9


@dataclass(frozen=True)
class Schedule:
    base_steps: int = 100
    steps_policy: str = "proportional"
    target_round_s: float | None = None
    total_rounds_budget: int | None = None
    wallclock_budget_s: float | None = None
    persistent_allocation: bool = False
    model_param_count: float = 7e9
    eval_every_aggregation: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    algorithm: AlgorithmConfig
    task: TaskSpec
    trainer: TrainerConfig
    schedule: Schedule
    facilities: tuple[FacilityProfile, ...]
    # algorithm fields the file left unset, filled from the scenario at run time
    derived_algorithm_fields: frozenset[str] = frozenset()
    calibration: dict = field(default_factory=dict, compare=False)

    @property
    def client_ids(self) -> list[str]:
        return [f.name for f in self.facilities]

    def with_algorithm(self, kind: str) -> "ScenarioConfig":
        if kind not in ALGORITHMS:
            raise ConfigError("algorithm.kind", f"unknown algorithm {kind!r}; valid: {', '.join(ALGORITHMS)}")
        return replace(self, algorithm=replace(self.algorithm, kind=kind))

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=int(seed))


# -- validation helpers -------------------------------------------------------

def _get(d: dict, key: str, path: str, kind, default=..., check=None, why=""):
    if key not in d or d[key] is None:
        if default is ...:
            raise ConfigError(f"{path}.{key}", "required field missing")
        return default
    v = d[key]
    p = f"{path}.{key}"
    if kind is bool:
        if not isinstance(v, bool):
            raise ConfigError(p, f"expected true/false, got {v!r}")
    elif kind is int:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or float(v) != int(v):
            raise ConfigError(p, f"expected an integer, got {v!r}")
        v = int(v)
    elif kind is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(p, f"expected a finite number, got {v!r}")
        v = float(v)
    elif kind is str:
        if not isinstance(v, str):
            raise ConfigError(p, f"expected a string, got {v!r}")
    if check is not None and not check(v):
        raise ConfigError(p, why or f"invalid value {v!r}")
    return v


def _section(d: dict, key: str, path: str, allowed: set[str], required: bool = True) -> dict:
    sec = d.get(key)
    p = f"{path}.{key}" if path else key
    if sec is None:
        if required:
            raise ConfigError(p, "required section missing")
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(p, "expected an object")
    extra = set(sec) - allowed
    if extra:
        raise ConfigError(f"{p}.{sorted(extra)[0]}", f"unknown field; allowed: {', '.join(sorted(allowed))}")
    return sec


def _pairs(v, path: str) -> tuple[tuple[float, float], ...]:
    if not isinstance(v, list) or not v:
        raise ConfigError(path, "expected a nonempty list of [nodes, value] pairs")
    out = []
    for i, pr in enumerate(v):
        if (not isinstance(pr, list) or len(pr) != 2
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in pr)):
            raise ConfigError(f"{path}[{i}]", f"expected [nodes, value], got {pr!r}")
        out.append((float(pr[0]), float(pr[1])))
    return tuple(out)


def _parse_queue(d: dict, path: str) -> QueueModel:
    q = _section(d, "queue", path, QUEUE_KEYS)
    qp = f"{path}.queue"
    try:
        return QueueModel(
            median_s=_get(q, "median_s", qp, float, check=lambda x: x > 0, why="must be positive"),
            sigma=_get(q, "sigma", qp, float, check=lambda x: x >= 0, why="must be nonnegative"),
            node_scaling=_pairs(q.get("node_scaling", [[1, 1]]), f"{qp}.node_scaling"),
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{qp}.node_scaling", str(e)) from None


def _parse_facility(d: Any, path: str) -> FacilityProfile:
    if not isinstance(d, dict):
        raise ConfigError(path, "expected an object")
    extra = set(d) - FACILITY_KEYS
    if extra:
        raise ConfigError(f"{path}.{sorted(extra)[0]}", "unknown field")
    pos = dict(check=lambda x: x > 0, why="must be positive")
    nonneg = dict(check=lambda x: x >= 0, why="must be nonnegative")
    pts = _pairs(d.get("throughput_points"), f"{path}.throughput_points")
    if any(b[0] <= a[0] for a, b in zip(pts, pts[1:])):
        raise ConfigError(f"{path}.throughput_points", "node counts must be strictly increasing")
    if any(t <= 0 or n <= 0 for n, t in pts):
        raise ConfigError(f"{path}.throughput_points", "nodes and throughputs must be positive")
    return FacilityProfile(
        name=_get(d, "name", path, str, check=bool, why="must be nonempty"),
        nodes=_get(d, "nodes", path, int, **pos),
        gpus_per_node=_get(d, "gpus_per_node", path, int, **pos),
        micro_batch=_get(d, "micro_batch", path, int, **pos),
        throughput_points=pts,
        queue=_parse_queue(d, path),
        init_overhead_s=_get(d, "init_overhead_s", path, float, 0.0, **nonneg),
        rtt_ms=_get(d, "rtt_ms", path, float, 0.0, **nonneg),
        bandwidth_asymptote_mb_s=_get(d, "bandwidth_asymptote_mb_s", path, float, **pos),
        bandwidth_halfsize_mb=_get(d, "bandwidth_halfsize_mb", path, float, **pos),
        reservation=_get(d, "reservation", path, bool, False),
        sample_weight=_get(d, "sample_weight", path, float, **pos),
        node_failure_prob=_get(d, "node_failure_prob", path, float, 0.0,
                               check=lambda x: 0 <= x <= 1, why="must be in [0, 1]"),
    )


def parse_config(raw: dict) -> ScenarioConfig:
    """Validate a decoded config object; raises :class:`ConfigError` with a field path."""
    if not isinstance(raw, dict):
        raise ConfigError("", "top level must be an object")
    extra = set(raw) - ROOT_KEYS
    if extra:
        raise ConfigError(sorted(extra)[0], f"unknown field; allowed: {', '.join(sorted(ROOT_KEYS))}")

    facs_raw = raw.get("facilities")
    if not isinstance(facs_raw, list) or not facs_raw:
        raise ConfigError("facilities", "expected a nonempty list")
    facilities = tuple(_parse_facility(f, f"facilities[{i}]") for i, f in enumerate(facs_raw))
    names = [f.name for f in facilities]
    if len(set(names)) != len(names):
        raise ConfigError("facilities", "facility names must be unique")

    t = _section(raw, "task", "", TASK_KEYS)
    task = TaskSpec(
        n_features=_get(t, "n_features", "task", int, check=lambda x: x >= 1, why="must be >= 1"),
        n_classes=_get(t, "n_classes", "task", int, check=lambda x: x >= 2, why="must be >= 2"),
        noise_sigma=_get(t, "noise_sigma", "task", float, check=lambda x: x >= 0, why="must be nonnegative"),
        train_samples=_get(t, "train_samples", "task", int,
                           check=lambda x: x >= len(facilities), why="must be at least the number of facilities"),
        test_samples=_get(t, "test_samples", "task", int,
                          check=lambda x: x >= len(facilities), why="must be at least the number of facilities"),
        skew=_get(t, "skew", "task", float, 0.0, check=lambda x: 0 <= x <= 1, why="must be in [0, 1]"),
    )

    tr = _section(raw, "trainer", "", TRAINER_KEYS)
    trainer = TrainerConfig(
        learning_rate=_get(tr, "learning_rate", "trainer", float, check=lambda x: x > 0, why="must be positive"),
        micro_batch=_get(tr, "micro_batch", "trainer", int, check=lambda x: x >= 1, why="must be >= 1"),
        momentum=_get(tr, "momentum", "trainer", float, 0.0, check=lambda x: 0 <= x < 1, why="must be in [0, 1)"),
        l2=_get(tr, "l2", "trainer", float, 0.0, check=lambda x: x >= 0, why="must be nonnegative"),
    )

    s = _section(raw, "schedule", "", SCHEDULE_KEYS)
    schedule = Schedule(
        base_steps=_get(s, "base_steps", "schedule", int, check=lambda x: x >= 1, why="must be >= 1"),
        steps_policy=_get(s, "steps_policy", "schedule", str, "proportional",
                          check=lambda x: x in ("proportional", "target_time"),
                          why="must be 'proportional' or 'target_time'"),
        target_round_s=_get(s, "target_round_s", "schedule", float, None, check=lambda x: x > 0, why="must be positive"),
        total_rounds_budget=_get(s, "total_rounds_budget", "schedule", int, None,
                                 check=lambda x: x >= 1, why="must be >= 1"),
        wallclock_budget_s=_get(s, "wallclock_budget_s", "schedule", float, None,
                                check=lambda x: x > 0, why="must be positive"),
        persistent_allocation=_get(s, "persistent_allocation", "schedule", bool, False),
        model_param_count=_get(s, "model_param_count", "schedule", float, 7e9,
                               check=lambda x: x >= 0, why="must be nonnegative"),
        eval_every_aggregation=_get(s, "eval_every_aggregation", "schedule", bool, True),
    )
    if schedule.total_rounds_budget is None and schedule.wallclock_budget_s is None:
        raise ConfigError("schedule", "set total_rounds_budget, wallclock_budget_s, or both")
    if schedule.steps_policy == "target_time":
        if schedule.target_round_s is None:
            raise ConfigError("schedule.target_round_s", "required when steps_policy is 'target_time'")
        for i, f in enumerate(facilities):
            if schedule.target_round_s <= f.init_overhead_s:
                raise ConfigError(f"facilities[{i}].init_overhead_s", "must be below schedule.target_round_s")

    a = _section(raw, "algorithm", "", ALGO_KEYS)
    kind = _get(a, "kind", "algorithm", str, "fedavg", check=lambda x: x in ALGORITHMS,
                why=f"unknown algorithm; valid: {', '.join(ALGORITHMS)}")
    base = schedule.base_steps
    derived = frozenset(k for k in ("q_min", "q_max", "group_window") if a.get(k) is None)
    q_max = _get(a, "q_max", "algorithm", int, base, check=lambda x: x >= 1, why="must be >= 1")
    q_min = _get(a, "q_min", "algorithm", int, max(1, math.ceil(base / 10)),
                 check=lambda x: x >= 1, why="must be >= 1")
    if q_min > q_max:
        raise ConfigError("algorithm.q_min", f"must not exceed q_max ({q_max})")
    buffer_size = _get(a, "buffer_size", "algorithm", int, 2, check=lambda x: x >= 1, why="must be >= 1")
    if buffer_size > len(facilities):
        raise ConfigError("algorithm.buffer_size", f"must not exceed the number of facilities ({len(facilities)})")
    algorithm = AlgorithmConfig(
        kind=kind,
        alpha=_get(a, "alpha", "algorithm", float, 0.6, check=lambda x: 0 < x <= 1, why="must be in (0, 1]"),
        staleness_exponent=_get(a, "staleness_exponent", "algorithm", float, 0.5,
                                check=lambda x: x >= 0, why="must be nonnegative"),
        buffer_size=buffer_size,
        q_min=q_min,
        q_max=q_max,
        # placeholder until the orchestrator derives 5% of the expected round time
        group_window=_get(a, "group_window", "algorithm", float, 1.0, check=lambda x: x > 0, why="must be positive"),
        server_lr=_get(a, "server_lr", "algorithm", float, 1.0, check=lambda x: x > 0, why="must be positive"),
        speed_smoothing=_get(a, "speed_smoothing", "algorithm", float, 0.5,
                             check=lambda x: 0 < x <= 1, why="must be in (0, 1]"),
        weight_by_samples=_get(a, "weight_by_samples", "algorithm", bool, True),
    )

    seed = _get(raw, "seed", "", int, 0, check=lambda x: 0 <= x < 2**64, why="must be an unsigned 64-bit integer")
    cal = raw.get("calibration", {})
    if not isinstance(cal, dict):
        raise ConfigError("calibration", "expected an object")
    return ScenarioConfig(
        name=_get(raw, "name", "", str, "scenario"),
        seed=seed,
        algorithm=algorithm,
        task=task,
        trainer=trainer,
        schedule=schedule,
        facilities=facilities,
        derived_algorithm_fields=derived,
        calibration=copy.deepcopy(cal),
    )


def loads(text: str) -> ScenarioConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"line {e.lineno}, column {e.colno}", e.msg) from None
    return parse_config(raw)


def load(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(str(path), f"cannot read config: {e.strerror or e}") from None
    return loads(text)


# -- shipped scenarios --------------------------------------------------------

def _facility_dict(name, gpus, micro, weight, rtt, bw_a, bw_h, curve, *, nodes, reservation,
                   queue_median, queue_sigma, init_overhead) -> dict:
    return {
        "name": name,
        "nodes": nodes,
        "gpus_per_node": gpus,
        "micro_batch": micro,
        "sample_weight": weight,
        "throughput_points": copy.deepcopy(THROUGHPUT_CURVES[curve]),
        "init_overhead_s": init_overhead,
        "rtt_ms": rtt,
        "bandwidth_asymptote_mb_s": bw_a,
        "bandwidth_halfsize_mb": bw_h,
        "reservation": reservation,
        "node_failure_prob": 0.0,
        "queue": {"median_s": queue_median, "sigma": queue_sigma, "node_scaling": copy.deepcopy(QUEUE_NODE_SCALING)},
    }


def _calibration_block() -> dict:
    return {
        "notes": [
            "Reference throughput curves at the throughput-study micro batches (Frontier 12, Perlmutter 80GB 16).",
            "FL scenarios run Frontier at micro batch 8 so the FL effective batches (4096, 128) come out exact.",
        ],
        "throughput_reference": [
            {"name": "Aurora", "micro_batch": 8, "throughput_points": copy.deepcopy(THROUGHPUT_CURVES["Aurora"])},
            {"name": "Perlmutter-80", "micro_batch": 16,
             "throughput_points": copy.deepcopy(THROUGHPUT_CURVES["Perlmutter-80"])},
            {"name": "Frontier", "micro_batch": 12, "throughput_points": copy.deepcopy(THROUGHPUT_CURVES["Frontier"])},
            {"name": "Polaris", "micro_batch": 6, "throughput_points": copy.deepcopy(THROUGHPUT_CURVES["Polaris"])},
            {"name": "Perlmutter-40", "micro_batch": 6,
             "throughput_points": copy.deepcopy(THROUGHPUT_CURVES["Perlmutter-40"])},
        ],
        "queue_anchor": {"facility": "Polaris", "nodes": 64},
    }


def coscheduled_64node() -> dict:
    """Reserved 64-node FedAvg run; steps sized so each round takes ~40 minutes."""
    facs = []
    for spec in _FACILITIES:
        nodes = 63 if spec[0] == "Polaris" else 64
        facs.append(_facility_dict(*spec, nodes=nodes, reservation=True, queue_median=50.0, queue_sigma=1.0,
                                   init_overhead=300.0))
    return {
        "name": "coscheduled_64node",
        "seed": 0,
        "notes": [
            "Reservations at every facility, so queue waits are zero.",
            "Polaris runs 63 nodes after a node failure: 252 GPUs x 6 = 1512.",
            "Local steps fill a 2400 s round after a 300 s init overhead.",
        ],
        "algorithm": {"kind": "fedavg"},
        "task": {"n_features": 99, "n_classes": 50, "noise_sigma": 3.0,
                 "train_samples": 6000, "test_samples": 2000, "skew": 0.9},
        "trainer": {"learning_rate": 0.01, "micro_batch": 32, "momentum": 0.0, "l2": 0.0},
        "schedule": {"base_steps": 100, "steps_policy": "target_time", "target_round_s": 2400.0,
                     "total_rounds_budget": 32, "persistent_allocation": False,
                     "model_param_count": 7e9, "eval_every_aggregation": True},
        "facilities": facs,
        "calibration": _calibration_block(),
    }


def table4_queued() -> dict:
    """Two nodes per facility, no reservations, Aurora stuck behind a slow queue."""
    facs = []
    for spec in _FACILITIES:
        median = 500.0 if spec[0] == "Aurora" else 50.0
        facs.append(_facility_dict(*spec, nodes=2, reservation=False, queue_median=median, queue_sigma=0.5,
                                   init_overhead=180.0))
    return {
        "name": "table4_queued",
        "seed": 0,
        "notes": [
            "Each local round is a fresh batch job through the facility queue.",
            "Aurora's 1-node queue median is 10x the others: the straggler.",
            "Local steps start proportional to each facility's sample count.",
            "FedCompass group window 300 s covers the queue-wait spread of the fast sites.",
        ],
        "algorithm": {"kind": "fedcompass", "group_window": 300.0},
        "task": {"n_features": 99, "n_classes": 50, "noise_sigma": 3.0,
                 "train_samples": 6000, "test_samples": 2000, "skew": 0.9},
        "trainer": {"learning_rate": 0.01, "micro_batch": 32, "momentum": 0.0, "l2": 0.0},
        "schedule": {"base_steps": 100, "steps_policy": "proportional", "total_rounds_budget": 40,
                     "wallclock_budget_s": 17000.0, "persistent_allocation": False,
                     "model_param_count": 7e9, "eval_every_aggregation": True},
        "facilities": facs,
        "calibration": _calibration_block(),
    }


SHIPPED = {"coscheduled_64node.cfg": coscheduled_64node, "table4_queued.cfg": table4_queued}


_RTT = re.compile(r'"rtt_ms": ([0-9.eE+-]+)')
_PAIR_LIST = re.compile(r"\[\s*\[[^\[\]]*\](?:\s*,\s*\[[^\[\]]*\])*\s*\]")


def dumps(raw: dict) -> str:
    """Indented JSON with ``[nodes, value]`` tables kept on one line."""
    text = json.dumps(raw, indent=2)
    text = _PAIR_LIST.sub(lambda m: json.dumps(json.loads(m.group(0))), text)
    # round-trip latencies are quoted to the microsecond, keep trailing zeros
    text = _RTT.sub(lambda m: f'"rtt_ms": {float(m.group(1)):.3f}', text)
    return text + "\n"


def shipped(name: str) -> ScenarioConfig:
    key = name if name.endswith(".cfg") else f"{name}.cfg"
    return parse_config(SHIPPED[key]())
