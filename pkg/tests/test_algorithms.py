import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from fedhpc_sim import algorithms as al
from fedhpc_sim.errors import DimensionMismatchError, MixedVersionError, StalenessError, UnknownGroupError


def upd(cid, params, base=0, n=1, steps=1):
    return al.ClientUpdate(cid, np.asarray(params, dtype=float), base, n, steps)


def state(params=(0.0,), version=0):
    return al.ServerState(al.GlobalModel(np.asarray(params, dtype=float), version))


def weighted_mean_oracle(params, counts):
    total = sum(counts)
    out = [0.0] * len(params[0])
    for p, n in zip(params, counts):
        for j, v in enumerate(p):
            out[j] += (n / total) * v
    return np.array(out)


# -- fedavg ---------------------------------------------------------------------

def test_fedavg_examples():
    np.testing.assert_array_equal(al.fedavg_aggregate([upd("a", [0, 2], n=5), upd("b", [2, 0], n=5)]), [1, 1])
    np.testing.assert_array_equal(al.fedavg_aggregate([upd("a", [3.5, -1])]), [3.5, -1])
    out = al.fedavg_aggregate([upd("a", [6], n=1), upd("b", [3], n=2), upd("c", [1], n=3)])
    assert out[0] == pytest.approx(2.5, abs=1e-15)


def test_fedavg_matches_brute_force_oracle_1000_instances():
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(1000):
        k, d = rng.integers(1, 8), rng.integers(1, 20)
        ps = rng.normal(0, 3, (k, d))
        ns = rng.integers(1, 10000, k)
        got = al.fedavg_aggregate([upd(str(i), ps[i], n=int(ns[i])) for i in range(k)])
        worst = max(worst, float(np.max(np.abs(got - weighted_mean_oracle(ps.tolist(), ns.tolist())))))
    assert worst < 1e-12


@given(st.integers(1, 6), st.integers(0, 1000))
def test_fedavg_permutation_invariant_and_equal_weights(k, seed):
    rng = np.random.default_rng(seed)
    ps = rng.normal(size=(k, 4))
    ups = [upd(str(i), ps[i], n=7) for i in range(k)]
    a = al.fedavg_aggregate(ups)
    b = al.fedavg_aggregate(ups[::-1])
    np.testing.assert_allclose(a, b, atol=1e-12)
    np.testing.assert_allclose(a, ps.mean(axis=0), atol=1e-12)


def test_fedavg_errors():
    with pytest.raises(ValueError):
        al.fedavg_aggregate([])
    with pytest.raises(MixedVersionError):
        al.fedavg_aggregate([upd("a", [1], base=0), upd("b", [1], base=1)])
    with pytest.raises(DimensionMismatchError):
        al.fedavg_aggregate([upd("a", [1]), upd("b", [1, 2])])


# -- staleness / fedasync -----------------------------------------------------------

def test_staleness_factor_examples():
    assert al.staleness_factor(0, 0.5) == 1.0
    assert al.staleness_factor(3, 0.5) == 0.5
    assert al.staleness_factor(5, 0) == 1.0
    with pytest.raises(StalenessError):
        al.staleness_factor(-1, 0.5)


@given(st.integers(0, 500), st.floats(0, 4))
def test_staleness_factor_nonincreasing(s, a):
    f0, f1 = al.staleness_factor(s, a), al.staleness_factor(s + 1, a)
    assert 0 < f1 <= f0 <= 1


def test_fedasync_examples():
    cfg = al.AlgorithmConfig("fedasync", alpha=1.0)
    g = al.fedasync_apply(al.GlobalModel(np.array([5.0, -2.0]), 0), upd("a", [1, 2]), cfg)
    np.testing.assert_array_equal(g.params, [1, 2])
    assert g.version == 1
    half = al.AlgorithmConfig("fedasync", alpha=0.5, staleness_exponent=0.5)
    assert al.fedasync_apply(al.GlobalModel(np.array([0.0]), 0), upd("a", [4]), half).params[0] == 2.0
    stale = al.fedasync_apply(al.GlobalModel(np.array([0.0]), 3), upd("a", [4], base=0), half)
    assert stale.params[0] == 1.0


def test_fedasync_matches_direct_arithmetic():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        alpha, a = rng.uniform(0.01, 1), rng.uniform(0, 2)
        v, s = int(rng.integers(0, 50)), None
        s = int(rng.integers(0, v + 1))
        gp, up = rng.normal(size=6), rng.normal(size=6)
        cfg = al.AlgorithmConfig("fedasync", alpha=alpha, staleness_exponent=a)
        got = al.fedasync_apply(al.GlobalModel(gp, v), upd("c", up, base=v - s), cfg).params
        at = alpha * (s + 1) ** (-a)
        np.testing.assert_allclose(got, (1 - at) * gp + at * up, rtol=0, atol=1e-12)


@given(st.floats(0.01, 1), st.integers(0, 20), st.integers(0, 10_000))
@settings(max_examples=50)
def test_fedasync_is_convex_combination(alpha, s, seed):
    rng = np.random.default_rng(seed)
    gp, up = rng.normal(size=5), rng.normal(size=5)
    cfg = al.AlgorithmConfig("fedasync", alpha=alpha)
    out = al.fedasync_apply(al.GlobalModel(gp, s), upd("c", up, base=0), cfg).params
    lo, hi = np.minimum(gp, up), np.maximum(gp, up)
    assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_fedasync_rejects_future_base_version():
    with pytest.raises(StalenessError):
        al.fedasync_apply(al.GlobalModel(np.zeros(1), 0), upd("a", [1], base=2), al.AlgorithmConfig("fedasync"))


# -- fedbuff ------------------------------------------------------------------------

def test_fedbuff_mean_delta_example():
    st_ = state([0.0])
    cfg = al.AlgorithmConfig("fedbuff", buffer_size=2, server_lr=1.0)
    assert al.fedbuff_ingest(st_, upd("a", [2]), cfg) is None
    g = al.fedbuff_ingest(st_, upd("b", [4]), cfg)
    assert g.params[0] == 3.0 and g.version == 1
    assert st_.buffer == []


def test_fedbuff_buffer_size_one_aggregates_every_update():
    st_ = state([0.0])
    cfg = al.AlgorithmConfig("fedbuff", buffer_size=1)
    for i in range(3):
        assert al.fedbuff_ingest(st_, upd("a", [1.0], base=i), cfg) is not None
    assert st_.version == 3


def test_fedbuff_no_trigger_before_full():
    st_ = state([0.0])
    cfg = al.AlgorithmConfig("fedbuff", buffer_size=3)
    assert al.fedbuff_ingest(st_, upd("a", [1]), cfg) is None
    assert al.fedbuff_ingest(st_, upd("b", [1]), cfg) is None
    assert len(st_.buffer) == 2 and st_.version == 0


def test_fedbuff_delta_uses_dispatch_snapshot():
    st_ = state([10.0], version=1)
    st_.snapshots["a"] = np.array([0.0])
    cfg = al.AlgorithmConfig("fedbuff", buffer_size=1, staleness_exponent=0.0)
    g = al.fedbuff_ingest(st_, upd("a", [2.0], base=0), cfg)
    assert g.params[0] == 12.0


@given(st.integers(1, 5), st.integers(1, 20))
def test_fedbuff_aggregation_cadence(k, n):
    st_ = state([0.0])
    cfg = al.AlgorithmConfig("fedbuff", buffer_size=k)
    for i in range(n):
        out = al.fedbuff_ingest(st_, upd(str(i), [1.0], base=st_.version), cfg)
        assert (out is not None) == ((i + 1) % k == 0)
        assert len(st_.buffer) == (i + 1) % k
    assert st_.version == n // k


# -- speed estimates ----------------------------------------------------------------

def test_update_speed_examples():
    e = al.update_speed(al.SpeedEstimate("a"), 2.0, 0.5)
    assert e.seconds_per_step == 2.0 and e.observations == 1
    assert al.update_speed(e, 4.0, 0.5).seconds_per_step == 3.0
    assert al.update_speed(e, 7.0, 1.0).seconds_per_step == 7.0
    with pytest.raises(ValueError):
        al.update_speed(e, 0.0, 0.5)


# -- fedcompass -------------------------------------------------------------------

def compass_state(speeds, overheads=None):
    s = state([0.0])
    for cid, sps in speeds.items():
        s.speeds[cid] = al.SpeedEstimate(cid, sps, 1)
    s.overheads.update(overheads or {})
    return s


def test_compass_assign_new_group():
    s = compass_state({"a": 2.0})
    cfg = al.AlgorithmConfig("fedcompass", q_min=5, q_max=20)
    steps, gid = al.compass_assign(s, "a", 100.0, cfg)
    assert steps == 20 and s.groups[gid].target_arrival == 140.0


def test_compass_assign_joins_group():
    s = compass_state({"a": 2.0, "b": 4.0})
    cfg = al.AlgorithmConfig("fedcompass", q_min=5, q_max=20)
    _, gid = al.compass_assign(s, "a", 100.0, cfg)
    steps, gid_b = al.compass_assign(s, "b", 100.0, cfg)
    assert (steps, gid_b) == (10, gid)
    assert s.groups[gid].member_ids == {"a", "b"}


def test_compass_assign_too_close_starts_new_group():
    s = compass_state({"a": 4.0, "b": 4.0})
    cfg = al.AlgorithmConfig("fedcompass", q_min=5, q_max=20)
    s.groups[0] = al.CompassGroup(0, {"a"}, 104.0)
    s.next_group_id = 1
    steps, gid = al.compass_assign(s, "b", 100.0, cfg)
    assert steps == 20 and gid == 1


def test_compass_assign_overhead_shifts_fit():
    s = compass_state({"a": 2.0, "b": 2.0}, {"b": 10.0})
    cfg = al.AlgorithmConfig("fedcompass", q_min=5, q_max=20)
    al.compass_assign(s, "a", 100.0, cfg)
    steps, _ = al.compass_assign(s, "b", 100.0, cfg)
    assert steps == 15


def test_compass_assign_refuses_double_membership():
    s = compass_state({"a": 2.0})
    cfg = al.AlgorithmConfig("fedcompass", q_min=5, q_max=20)
    al.compass_assign(s, "a", 0.0, cfg)
    with pytest.raises(ValueError):
        al.compass_assign(s, "a", 0.0, cfg)


@given(
    st.lists(st.tuples(st.floats(0.01, 50), st.floats(0, 500)), min_size=1, max_size=12),
    st.integers(1, 30), st.integers(0, 60),
)
def test_compass_assign_bounds_and_membership(clients, q_min, extra):
    cfg = al.AlgorithmConfig("fedcompass", q_min=q_min, q_max=q_min + extra)
    s = compass_state({str(i): sps for i, (sps, _) in enumerate(clients)})
    for i, (_, now) in enumerate(clients):
        steps, gid = al.compass_assign(s, str(i), now, cfg)
        assert cfg.q_min <= steps <= cfg.q_max
        assert str(i) in s.groups[gid].member_ids
    seen = [c for g in s.open_groups() for c in g.member_ids]
    assert len(seen) == len(set(seen)) == len(clients)


def test_compass_single_member_equals_fedasync():
    cfg = al.AlgorithmConfig("fedcompass", alpha=0.5, q_min=1, q_max=10)
    s = compass_state({"a": 1.0})
    s.model = al.GlobalModel(np.array([0.0]), 3)
    al.compass_assign(s, "a", 0.0, cfg)
    u = upd("a", [4.0], base=0)
    got = al.compass_ingest(s, u, 10.0, cfg)
    want = al.fedasync_apply(al.GlobalModel(np.array([0.0]), 3), u, cfg)
    np.testing.assert_array_equal(got.params, want.params)
    assert got.version == want.version


def test_compass_group_mean_with_full_replacement():
    cfg = al.AlgorithmConfig("fedcompass", alpha=1.0, q_min=1, q_max=10)
    s = compass_state({"a": 1.0, "b": 1.0})
    s.model = al.GlobalModel(np.array([9.0, 9.0]), 0)
    al.compass_assign(s, "a", 0.0, cfg)
    al.compass_assign(s, "b", 0.0, cfg)
    assert al.compass_ingest(s, upd("a", [2.0, 0.0], n=3), 10.0, cfg) is None
    g = al.compass_ingest(s, upd("b", [0.0, 4.0], n=3), 10.0, cfg)
    np.testing.assert_array_equal(g.params, [1.0, 2.0])


def test_compass_timeout_then_late_update():
    cfg = al.AlgorithmConfig("fedcompass", alpha=1.0, q_min=1, q_max=10, group_window=5.0)
    s = compass_state({"a": 1.0, "b": 1.0})
    _, gid = al.compass_assign(s, "a", 0.0, cfg)
    al.compass_assign(s, "b", 0.0, cfg)
    assert al.compass_ingest(s, upd("a", [2.0]), 9.0, cfg) is None
    # timer fires past target + window
    g = al.compass_deadline(s, gid, cfg)
    assert g.version == 1 and g.params[0] == 2.0
    assert al.compass_deadline(s, gid, cfg) is None  # aggregates at most once
    late = al.compass_ingest(s, upd("b", [6.0], base=0), 30.0, cfg, group_id=gid)
    assert late.version == 2
    assert len(s.groups) == 2 and all(g.closed for g in s.groups.values())


def test_compass_arrival_past_window_aggregates_partial():
    cfg = al.AlgorithmConfig("fedcompass", q_min=1, q_max=10, group_window=5.0)
    s = compass_state({"a": 1.0, "b": 1.0})
    al.compass_assign(s, "a", 0.0, cfg)
    al.compass_assign(s, "b", 0.0, cfg)
    assert al.compass_ingest(s, upd("a", [1.0]), 16.0, cfg) is not None


def test_compass_unknown_group_errors():
    cfg = al.AlgorithmConfig("fedcompass")
    s = state([0.0])
    with pytest.raises(UnknownGroupError):
        al.compass_ingest(s, upd("x", [1.0]), 0.0, cfg)
    with pytest.raises(UnknownGroupError):
        al.compass_deadline(s, 42, cfg)


# -- step selection ----------------------------------------------------------------

def test_select_steps_proportional_examples():
    assert al.select_steps_proportional([1217627, 78319, 120565, 1925903], 100) == [63, 4, 6, 100]
    assert al.select_steps_proportional([5, 5, 5], 40) == [40, 40, 40]
    assert al.select_steps_proportional([1, 1000000], 10) == [1, 10]


@given(st.lists(st.integers(1, 10**7), min_size=1, max_size=10), st.integers(1, 500))
def test_select_steps_bounds(counts, base):
    steps = al.select_steps_proportional(counts, base)
    assert all(1 <= q <= base for q in steps)
    assert steps[counts.index(max(counts))] == base


def test_algorithm_config_validation():
    with pytest.raises(ValueError, match="valid"):
        al.AlgorithmConfig("fedprox")
    with pytest.raises(ValueError):
        al.AlgorithmConfig(q_min=10, q_max=5)
    with pytest.raises(ValueError):
        al.AlgorithmConfig(buffer_size=0)


@given(st.lists(st.sampled_from(["avg", "async", "buff"]), min_size=1, max_size=30))
@settings(max_examples=30)
def test_every_aggregation_increments_version_by_one(ops):
    s = state([0.0, 0.0])
    cfg = al.AlgorithmConfig("fedbuff", buffer_size=1)
    for op in ops:
        v = s.version
        u = upd("a", [1.0, 2.0], base=v)
        if op == "avg":
            s.model = al.GlobalModel(al.fedavg_aggregate([u]), v + 1)
        elif op == "async":
            s.model = al.fedasync_apply(s.model, u, cfg)
        else:
            al.fedbuff_ingest(s, u, cfg)
        assert s.version == v + 1
