"""Smoke checks on the python surface of the C++ core."""

import math

import numpy as np

import sdeattn

TINY_CONFIG = """
[dataset]
kind=two-class-freq
train_series=16
test_series=8
points=10
seed=3

[task]
task=classification

[model]
latent=4
mlp_hidden=6
output_hidden=6
substeps=2

[train]
iters=3
batch=8
seeds=1

[sweep]
variants=sde-rnn
missing_rates=0
"""


def test_generate_periodic_shapes_and_determinism():
    a = sdeattn.generate_periodic(trajectories=40, points=25, seed=7, group=16)
    b = sdeattn.generate_periodic(trajectories=40, points=25, seed=7, group=16)
    assert len(a) == 3  # 16 + 16 + 8
    assert a[0]["values"].shape == (25, 16, 1)
    assert a[-1]["values"].shape == (25, 8, 1)
    for lhs, rhs in zip(a, b):
        np.testing.assert_array_equal(lhs["values"], rhs["values"])
        np.testing.assert_array_equal(lhs["timestamps"], rhs["timestamps"])
    c = sdeattn.generate_periodic(trajectories=40, points=25, seed=8, group=16)
    assert not np.array_equal(a[0]["values"], c[0]["values"])


def test_ou_noise_statistics():
    ts = np.arange(1, 50001) * 0.05
    eta = sdeattn.ou_noise(list(ts), theta=2.0, mu=0.0, sigma=0.2, seed=11)
    stat_var = 0.2**2 / (2 * 2.0)
    assert abs(eta.var() - stat_var) < 0.1 * stat_var


def test_brownian_increment_variance():
    grid = [0.02 * k for k in range(101)]
    inc = sdeattn.brownian_increments(grid, batch=100, width=10, seed=5)
    assert inc.shape == (100, 100, 10)
    assert abs(inc.var() - 0.02) < 0.05 * 0.02
    again = sdeattn.brownian_increments(grid, batch=100, width=10, seed=5)
    np.testing.assert_array_equal(inc, again)


def test_apply_mcar_rate():
    values = np.ones((50, 40, 5))
    mask = np.ones_like(values)
    dropped_values, dropped_mask = sdeattn.apply_mcar(values, mask, rate=0.6, seed=9)
    frac = dropped_mask.mean()
    assert abs(frac - 0.4) < 4 * math.sqrt(0.6 * 0.4 / values.size)
    assert np.all(dropped_values[dropped_mask == 0] == 0)


def test_hold_out_keeps_first_point():
    values = np.random.default_rng(0).normal(size=(20, 6, 2))
    mask = np.ones_like(values)
    cond_values, cond_mask, targets = sdeattn.hold_out_observation(values, mask, observed_rate=0.3, seed=4)
    np.testing.assert_array_equal(targets, values)
    per_series = cond_mask[:, :, 0].sum(axis=0)
    assert np.all(per_series == math.ceil(0.3 * 20))
    assert np.all(cond_mask[0] == 1.0)
    assert np.all(cond_values[cond_mask == 0] == 0)


def test_train_cell_runs_and_is_deterministic():
    first = sdeattn.train_cell(TINY_CONFIG, variant="sde-rnn", rate=0.0, seed=1)
    assert first["ok"], first["error"]
    assert 0.0 <= first["metric"] <= 1.0
    second = sdeattn.train_cell(TINY_CONFIG, variant="sde-rnn", rate=0.0, seed=1)
    assert second["metric"] == first["metric"]


def test_config_echo_round_trip():
    echo = sdeattn.config_echo(TINY_CONFIG)
    assert "latent=4" in echo
    assert sdeattn.config_echo(echo) == echo


def test_unknown_variant_is_reported_not_raised():
    result = sdeattn.train_cell(TINY_CONFIG, variant="sde-unknown", rate=0.0, seed=1)
    assert not result["ok"]
    assert "sde-unknown" in result["error"]
