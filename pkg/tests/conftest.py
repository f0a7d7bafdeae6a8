import copy

import pytest

from fedhpc_sim import config as cf


def small_raw(kind="fedavg", **schedule):
    """The shipped queued scenario shrunk to a toy task so runs take milliseconds."""
    r = copy.deepcopy(cf.table4_queued())
    r["algorithm"] = {"kind": kind}
    r["task"] = {"n_features": 6, "n_classes": 5, "noise_sigma": 1.0, "train_samples": 400,
                 "test_samples": 200, "skew": 0.8}
    r["trainer"] = {"learning_rate": 0.05, "micro_batch": 8}
    r["schedule"]["base_steps"] = 20
    r["schedule"].update(schedule)
    return r


def small(kind="fedavg", seed=0, **schedule):
    return cf.parse_config(small_raw(kind, **schedule)).with_seed(seed)


@pytest.fixture
def small_config():
    return small
