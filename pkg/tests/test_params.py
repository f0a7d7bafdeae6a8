import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedhpc_sim import params as pm
from fedhpc_sim.errors import DimensionMismatchError, EmptyDatasetError, PartitionError

TABLE1_WEIGHTS = [1217627, 78319, 120565, 1925903]


def ce_loss_oracle(w, X, y):
    """Mean cross-entropy computed row by row with plain Python math."""
    n_classes = w.size // (X.shape[1] + 1)
    m = w.reshape(n_classes, X.shape[1] + 1)
    total = 0.0
    for x, label in zip(X, y):
        z = [float(np.dot(m[k, :-1], x) + m[k, -1]) for k in range(n_classes)]
        top = max(z)
        lse = top + math.log(sum(math.exp(v - top) for v in z))
        total += lse - z[label]
    return total / len(y)


def fd_gradient(w, X, y, h=1e-6):
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (ce_loss_oracle(w + e, X, y) - ce_loss_oracle(w - e, X, y)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


# -- generate_task -------------------------------------------------------------

def test_generate_task_is_deterministic():
    a = pm.generate_task(4, 3, 0.5, seed=7)
    b = pm.generate_task(4, 3, 0.5, seed=7)
    assert a.class_centers.tobytes() == b.class_centers.tobytes()
    assert a.param_dim == 3 * 5


def test_zero_noise_samples_sit_on_centers():
    task = pm.generate_task(4, 3, 0.0, seed=11)
    labels = np.array([0, 1, 2, 2, 0])
    X = task.sample(labels, np.random.default_rng(0))
    np.testing.assert_array_equal(X, task.class_centers[labels])


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30)
def test_centers_pairwise_distinct(seed):
    task = pm.generate_task(2, 2, 1.0, seed=seed)
    c = task.class_centers
    assert np.any(c[0] != c[1])


def test_generate_task_rejects_bad_args():
    with pytest.raises(ValueError):
        pm.generate_task(0, 3, 1.0, 0)
    with pytest.raises(ValueError):
        pm.generate_task(3, 3, -1.0, 0)


# -- partition ------------------------------------------------------------------

def test_split_counts_table1_proportions():
    counts = pm.split_counts(TABLE1_WEIGHTS, 33424)
    assert sum(counts) == 33424
    for got, want in zip(counts, [12176, 783, 1206, 19259]):
        assert abs(got - want) <= 1


def test_split_counts_arithmetic():
    assert pm.split_counts([3, 1], 400) == [300, 100]


def test_remainder_goes_to_largest_lowest_index():
    # 10 / 3 each -> 3,3,3 then remainder 1 to index 0 (tie on weight)
    assert pm.split_counts([1, 1, 1], 10) == [4, 3, 3]
    assert pm.split_counts([1, 2, 2], 11) == [2, 5, 4]


@given(
    st.lists(st.floats(0.01, 1e6), min_size=1, max_size=8),
    st.integers(0, 5000),
)
def test_split_counts_conserves_total(weights, extra):
    total = len(weights) * 50 + extra
    try:
        counts = pm.split_counts(weights, total)
    except PartitionError:
        return  # a tiny share can legitimately round to zero
    assert sum(counts) == total
    assert min(counts) >= 1


def test_partition_rejects_bad_input():
    task = pm.generate_task(3, 4, 1.0, 0)
    with pytest.raises(PartitionError):
        pm.partition_noniid(task, [1, -1], 100, 0.5, 0)
    with pytest.raises(PartitionError):
        pm.partition_noniid(task, [1, 1], 100, 1.5, 0)
    with pytest.raises(PartitionError):
        pm.partition_noniid(task, [1, 1], 1, 0.5, 0)


def test_partition_deterministic_and_sized():
    task = pm.generate_task(3, 4, 1.0, 5)
    a = pm.partition_noniid(task, [3, 1], 400, 0.8, seed=9)
    b = pm.partition_noniid(task, [3, 1], 400, 0.8, seed=9)
    assert [d.sample_count for d in a] == [300, 100]
    for x, y in zip(a, b):
        assert x.features.tobytes() == y.features.tobytes()
        assert x.labels.tobytes() == y.labels.tobytes()


def test_skew_zero_gives_matching_histograms():
    task = pm.generate_task(3, 4, 1.0, 5)
    a, b = pm.partition_noniid(task, [1, 1], 40000, 0.0, seed=1)
    ha = a.label_histogram(4) / a.sample_count
    hb = b.label_histogram(4) / b.sample_count
    assert np.max(np.abs(ha - hb)) < 0.02


def test_full_skew_confines_labels_to_owned_set():
    task = pm.generate_task(3, 4, 1.0, 5)
    a, b = pm.partition_noniid(task, [1, 1], 1000, 1.0, seed=1)
    assert set(a.labels.tolist()) <= {0, 2}
    assert set(b.labels.tolist()) <= {1, 3}


def test_label_mixture_rows_are_distributions():
    p = pm.label_mixture(4, 10, 0.9)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=0, atol=1e-12)


# -- gradient -----------------------------------------------------------------

def test_gradient_matches_finite_differences_100_probes():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        d, k, n = rng.integers(1, 5), rng.integers(2, 5), rng.integers(1, 6)
        w = rng.normal(0, 1, k * (d + 1))
        X = rng.normal(0, 1, (n, d))
        y = rng.integers(0, k, n)
        worst = max(worst, rel_err(pm.gradient(w, (X, y)), fd_gradient(w, X, y)))
    assert worst < 1e-5


def test_bias_gradient_rows_mean_zero_for_balanced_batch():
    X = np.random.default_rng(0).normal(size=(6, 2))
    y = np.array([0, 1, 2, 0, 1, 2])
    g = pm.gradient(pm.zeros(2, 3), (X, y)).reshape(3, 3)
    assert abs(g[:, -1].sum()) < 1e-15
    np.testing.assert_allclose(g[:, -1], 0.0, atol=1e-15)


def test_duplicated_sample_gives_same_gradient():
    rng = np.random.default_rng(1)
    w = rng.normal(size=3 * 4)
    x = rng.normal(size=(1, 3))
    single = pm.gradient(w, (x, np.array([2])))
    many = pm.gradient(w, (np.repeat(x, 7, axis=0), np.full(7, 2)))
    np.testing.assert_allclose(many, single, rtol=1e-13, atol=1e-15)


def test_gradient_shape_errors():
    with pytest.raises(DimensionMismatchError):
        pm.gradient(np.zeros(7), (np.zeros((1, 2)), np.array([0])))
    with pytest.raises(EmptyDatasetError):
        pm.gradient(np.zeros(6), (np.zeros((0, 2)), np.array([], dtype=int)))
    with pytest.raises(DimensionMismatchError):
        pm.gradient(np.zeros(6), (np.zeros((1, 2)), np.array([5])))


# -- local_train ----------------------------------------------------------------

def _one_sample_dataset():
    return pm.ClientDataset(np.array([[0.5, -1.0]]), np.array([1]), "c")


def test_zero_steps_is_identity():
    w = np.random.default_rng(3).normal(size=9)
    out = pm.local_train(w, _one_sample_dataset(), 0, pm.TrainerConfig(), 0)
    assert out.tobytes() == w.tobytes()


def test_single_step_matches_closed_form():
    ds = _one_sample_dataset()
    w = np.random.default_rng(4).normal(size=9)
    out = pm.local_train(w, ds, 1, pm.TrainerConfig(learning_rate=0.1), 0)
    expected = w - 0.1 * fd_gradient(w, ds.features, ds.labels)
    np.testing.assert_allclose(out, expected, atol=1e-8)


def test_local_train_deterministic_and_reduces_loss():
    task = pm.generate_task(5, 3, 0.5, 1)
    (ds,) = pm.partition_noniid(task, [1], 90, 0.0, 2)
    cfg = pm.TrainerConfig(learning_rate=0.1, micro_batch=8)
    w0 = pm.zeros(5, 3)
    a = pm.local_train(w0, ds, 40, cfg, [7, 1])
    b = pm.local_train(w0, ds, 40, cfg, [7, 1])
    assert a.tobytes() == b.tobytes()
    assert pm.evaluate(a, [ds])[0] < pm.evaluate(w0, [ds])[0]


def test_local_train_wraps_epochs_and_handles_small_sets():
    task = pm.generate_task(2, 2, 0.5, 1)
    (ds,) = pm.partition_noniid(task, [1], 5, 0.0, 2)
    out = pm.local_train(pm.zeros(2, 2), ds, 13, pm.TrainerConfig(micro_batch=3), 0)
    assert np.all(np.isfinite(out))


def test_trainer_config_validation():
    with pytest.raises(ValueError):
        pm.TrainerConfig(learning_rate=0)
    with pytest.raises(ValueError):
        pm.TrainerConfig(micro_batch=0)


# -- evaluate -----------------------------------------------------------------

def test_random_params_give_log_k_loss():
    task = pm.generate_task(4, 3, 1.0, 3)
    data = pm.partition_noniid(task, [1, 1, 1], 3000, 0.0, 4)
    w = np.random.default_rng(5).uniform(-1e-3, 1e-3, task.param_dim)
    loss, _ = pm.evaluate(w, data)
    assert abs(loss - math.log(3)) < 0.1


def test_perfect_separation_on_zero_noise():
    task = pm.generate_task(3, 3, 0.0, 8)
    data = pm.partition_noniid(task, [1, 2], 300, 0.5, 9)
    c = task.class_centers
    # logit_k = c_k.x - |c_k|^2 / 2 picks the nearest center
    w = np.concatenate([c, -0.5 * (c**2).sum(axis=1, keepdims=True)], axis=1).ravel()
    assert pm.evaluate(w * 50, data)[1] == 1.0


@given(st.permutations(range(4)))
@settings(max_examples=20)
def test_evaluate_order_invariant(perm):
    task = pm.generate_task(3, 4, 1.0, 6)
    data = pm.partition_noniid(task, [1, 2, 3, 4], 400, 0.7, 7)
    w = np.random.default_rng(1).normal(size=task.param_dim)
    ref = pm.evaluate(w, data)
    shuffled = [data[i] for i in perm]
    # also permute rows inside the first dataset
    d0 = shuffled[0]
    rows = np.random.default_rng(perm[0]).permutation(d0.sample_count)
    shuffled[0] = pm.ClientDataset(d0.features[rows], d0.labels[rows], d0.client_id)
    assert pm.evaluate(w, shuffled) == ref


def test_evaluate_empty_raises():
    with pytest.raises(EmptyDatasetError):
        pm.evaluate(np.zeros(6), [])


def test_assert_finite_rejects_nan():
    with pytest.raises(FloatingPointError):
        pm.assert_finite(np.array([1.0, np.nan]))


def test_dump_datasets_csv(tmp_path):
    task = pm.generate_task(2, 2, 1.0, 0)
    data = pm.partition_noniid(task, [1, 1], 6, 0.5, 0)
    path = tmp_path / "d.csv"
    pm.dump_datasets_csv(data, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 7
    assert lines[0].startswith("client_id,row,feature_0")
