"""Shared fixtures: small instances of the benchmark problem."""

import pathlib

import numpy as np
import pytest

from pareto_trrb import driver


BENCHMARK_CONFIG = pathlib.Path(__file__).resolve().parent.parent \
    / "benchmark.config"


def make_config(n=8, **overrides):
    """Benchmark configuration at a reduced mesh resolution."""
    cfg = driver.load_config(BENCHMARK_CONFIG)
    cfg.n_per_side = n
    cfg.h = 0.05
    for key, val in overrides.items():
        setattr(cfg, key, val)
    return cfg


def toy_config(**overrides):
    """Two purely parametric quadratic objectives; the front is the
    segment between the two desired parameters and every evaluation is
    PDE-free."""
    cfg = driver.ExperimentConfig(
        n_per_side=4, sigma_omega=[0.0, 0.0], sigma_u=[1.0, 1.0],
        y_omega=["none", "none"],
        u_d=[[1.0, 0.5, 0.5, 0.5, 1.0], [1.0, 2.5, 2.5, 2.5, 1.0]],
        u_a=[1.0, 0.1, 0.1, 0.1, 1.0], u_b=[1.0, 4.0, 4.0, 4.0, 1.0],
        h=0.05, tilde_d=[0.001, 0.001], r_direction=[1.0, 1.0],
        backend="fe", removal="none")
    for key, val in overrides.items():
        setattr(cfg, key, val)
    return cfg


@pytest.fixture(scope="session")
def bench8():
    cfg = make_config(8)
    fom, cost = driver.build_problem(cfg)
    return cfg, fom, cost


@pytest.fixture(scope="session")
def bench4():
    cfg = make_config(4)
    fom, cost = driver.build_problem(cfg)
    return cfg, fom, cost


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def random_u(cost, rng, n=1):
    """Uniform samples in the admissible box."""
    w = rng.uniform(size=(n, len(cost.u_a)))
    out = cost.u_a + w * (cost.u_b - cost.u_a)
    return out[0] if n == 1 else out
