"""Anchor checks for the facility models against measured reference values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hpcsim
from .config import ScenarioConfig

THROUGHPUT_AT_64 = {"Aurora": 2100.0, "Perlmutter-80": 1200.0, "Frontier": 1000.0, "Polaris": 250.0,
                    "Perlmutter-40": 250.0}
THROUGHPUT_TOL = 0.01

RTT_MS = {"Aurora": 0.266, "Polaris": 0.210, "Frontier": 17.281, "Perlmutter": 45.205}

MODEL_SIZES_MB = {125e6: 250.0, 13e9: 26000.0}

# (facility, nodes) -> effective batch for the co-scheduled and two-node FL runs
EFFECTIVE_BATCH = {
    ("Polaris", 63): 1512, ("Perlmutter", 64): 1536, ("Aurora", 64): 6144, ("Frontier", 64): 4096,
    ("Polaris", 2): 48, ("Perlmutter", 2): 48, ("Aurora", 2): 192, ("Frontier", 2): 128,
}

QUEUE_MEDIAN_64_S = 360000.0
QUEUE_TOL = 0.05
QUEUE_DRAWS = 10_000

LARGE_TRANSFER_MB = 26000.0
BANDWIDTH_GAP_MB_S = (175.0, 200.0)


@dataclass(frozen=True)
class Check:
    label: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.label}: {status}" + (f"  [{self.detail}]" if self.detail else "")


def _fmt_anchor(x: float) -> str:
    return f"{x:g}" if x < 1e5 else f"{x:.0f}"


def throughput_checks(config: ScenarioConfig) -> list[Check]:
    # reference curves cover variants not flown as facilities; the facility's own curve wins
    curves = {ref["name"]: ref["throughput_points"] for ref in config.calibration.get("throughput_reference", [])}
    for f in config.facilities:
        curves[f.name] = f.throughput_points
    out = []
    for name, anchor in THROUGHPUT_AT_64.items():
        if name not in curves:
            continue
        probe = hpcsim.FacilityProfile(name, 64, 1, 1, tuple(map(tuple, curves[name])), hpcsim.QueueModel(1.0, 0.0))
        got = hpcsim.throughput(probe, 64)
        ok = abs(got - anchor) <= THROUGHPUT_TOL * anchor
        out.append(Check(f"{name}@64 ≈ {anchor:.0f} samples/s", ok, f"model {got:.1f}"))
    return out


def size_checks() -> list[Check]:
    out = []
    for params, mb in MODEL_SIZES_MB.items():
        got = hpcsim.model_size_mb(params)
        label = f"{params / 1e9:g}B" if params >= 1e9 else f"{params / 1e6:g}M"
        out.append(Check(f"{label} → {mb:.0f} MB", got == mb, f"model {got:g} MB"))
    return out


def latency_checks(config: ScenarioConfig) -> list[Check]:
    return [
        Check(f"{f.name} rtt = {RTT_MS[f.name]:.3f} ms", f.rtt_ms == RTT_MS[f.name], f"config {f.rtt_ms:.3f} ms")
        for f in config.facilities if f.name in RTT_MS
    ]


def batch_checks(config: ScenarioConfig) -> list[Check]:
    out = []
    for f in config.facilities:
        want = EFFECTIVE_BATCH.get((f.name, f.nodes))
        if want is not None:
            out.append(Check(f"{f.name} x{f.nodes} nodes effective batch = {want}", f.effective_batch == want,
                             f"{f.total_gpus} GPUs x micro {f.micro_batch} = {f.effective_batch}"))
    return out


def queue_checks(config: ScenarioConfig, seed: int = 0) -> list[Check]:
    anchor = config.calibration.get("queue_anchor", {"facility": "Polaris", "nodes": 64})
    by_name = {f.name: f for f in config.facilities}
    fac = by_name.get(anchor.get("facility", "Polaris"))
    if fac is None:
        return []
    nodes = anchor.get("nodes", 64)
    median = fac.queue.median_at(nodes)
    rng = np.random.default_rng(seed)
    draws = np.array([hpcsim.sample_queue_wait(fac.queue, nodes, rng) for _ in range(QUEUE_DRAWS)])
    empirical = float(np.median(draws))
    label = f"{fac.name}@{nodes} queue median ≈ {_fmt_anchor(QUEUE_MEDIAN_64_S)} s within 5%"
    ok = (abs(median - QUEUE_MEDIAN_64_S) <= QUEUE_TOL * QUEUE_MEDIAN_64_S
          and abs(empirical - QUEUE_MEDIAN_64_S) <= QUEUE_TOL * QUEUE_MEDIAN_64_S)
    return [Check(label, ok, f"configured {median:.0f} s, empirical median of {QUEUE_DRAWS} draws {empirical:.0f} s")]


def bandwidth_checks(config: ScenarioConfig) -> list[Check]:
    if len(config.facilities) < 2:
        return []
    speeds = {f.name: hpcsim.effective_bandwidth(f, LARGE_TRANSFER_MB) for f in config.facilities}
    gap = max(speeds.values()) - min(speeds.values())
    lo, hi = BANDWIDTH_GAP_MB_S
    return [Check(f"bandwidth gap at {LARGE_TRANSFER_MB:.0f} MB nearly 200 MB/s", lo <= gap <= hi,
                  f"gap {gap:.1f} MB/s")]


def calibrate_check(config: ScenarioConfig) -> list[Check]:
    return (throughput_checks(config) + size_checks() + latency_checks(config) + batch_checks(config)
            + queue_checks(config) + bandwidth_checks(config))
