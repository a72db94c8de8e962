"""Smoke tests for the _dln extension module."""

import math

import pytest

import _dln as dln


def test_model_roundtrip():
    stack = dln.balanced_init(3, 2, 0.01)
    assert stack.depth == 2
    assert stack.dim == 3
    prod = dln.hadamard_product(stack)
    assert prod == pytest.approx([0.01, 0.01, 0.01], rel=1e-12)
    assert dln.balancedness_gap(stack) == 0.0
    assert dln.predict(stack, [1.0, 2.0, 3.0]) == pytest.approx(0.06, rel=1e-12)


def test_dataset_determinism_and_loss():
    noise = dln.NoiseSpec(p=0.1, dist="gaussian", param=5.0)
    ds1 = dln.generate_dataset(d=20, k=3, m=50, theta_min=1.0, theta_max=2.0,
                               noise=noise, seed=7)
    ds2 = dln.generate_dataset(d=20, k=3, m=50, theta_min=1.0, theta_max=2.0,
                               noise=noise, seed=7)
    assert ds1.design == ds2.design
    assert ds1.responses == ds2.responses
    assert len(ds1.noise_support) == 5

    star = dln.balanced_true_solution(ds1.theta_star, 2)
    loss = dln.l1_loss(star, ds1)
    expected = sum(abs(e) for e in ds1.noise) / ds1.m
    assert loss == pytest.approx(expected, rel=1e-10)


def test_phi_factor_matches_closed_form():
    noise = dln.NoiseSpec(p=0.0, dist="gaussian", param=1.0)
    value, stderr = dln.phi_factor(0.0, noise, 1.0)
    assert value == pytest.approx(math.sqrt(2.0 / math.pi), abs=1e-12)
    assert stderr == 0.0


def test_subgm_reduces_loss():
    noise = dln.NoiseSpec(p=0.0, dist="gaussian", param=1.0)
    ds = dln.generate_dataset(d=10, k=2, m=100, theta_min=1.0, theta_max=2.0,
                              noise=noise, seed=0)
    traj = dln.run_subgm(ds, n_layers=2, alpha=1e-3, eta=1e-2,
                         iterations=20000, log_stride=1000)
    errors = traj["generalization_error"]
    assert not traj["diverged"]
    assert min(errors) < 0.1 * errors[0]


def test_population_run_tracks_schema():
    traj = dln.run_population([1.0, 0.5, 0.0], n_layers=2, alpha=1e-3,
                              eta=1e-2, iterations=500, log_stride=100)
    assert traj["iteration"][0] == 0
    assert len(traj["iteration"]) == len(traj["generalization_error"])


def test_matrix_problem_smoke():
    noise = dln.NoiseSpec(p=0.0, dist="gaussian", param=1.0)
    mds = dln.generate_matrix_problem(d=8, r=2, m=40, noise=noise, seed=1)
    assert mds.d == 8 and mds.rank == 2
    traj = dln.run_subgm_matrix(mds, n_layers=2, alpha=1e-2, eta=1e-3,
                                iterations=2000, log_stride=200)
    ge = traj["generalization_error"]
    assert ge[-1] < ge[0]
