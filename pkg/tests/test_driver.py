"""Hierarchical driver: toy analytic problem, backend plumbing, export."""

import filecmp
from types import SimpleNamespace

import numpy as np
import pytest

from pareto_trrb import driver, moo

from conftest import make_config, toy_config


@pytest.fixture(scope="module")
def toy_report():
    return driver.run_hierarchy(toy_config(h=0.2))


def toy_analytic_front(n=400):
    """The exact front of the two-quadratic toy: the segment between the
    desired parameters, J_i(s) = 6 s_i^2 with s_2 = 1 - s_1."""
    s = np.linspace(0.0, 1.0, n)
    return np.column_stack([6.0 * s ** 2, 6.0 * (1.0 - s) ** 2])


def test_toy_recovers_closed_form_front(toy_report):
    cfg_h = 0.2
    J = toy_report.archive.objective_matrix()
    assert moo.coverage(toy_analytic_front(), J) <= cfg_h
    # PDE-free: the run performed no full-order solves
    assert toy_report.totals["full_solves"] == 0
    # ideal point of the toy is (0, 0)
    assert np.allclose(toy_report.ideal, 0.0, atol=1e-8)


def test_toy_archive_is_nondominated(toy_report):
    J = toy_report.archive.objective_matrix()
    keep = moo.non_dominance_filter(J)
    assert keep == list(range(len(J)))


def test_empty_grid_completes():
    # a grid step above the nadir span leaves only the individual minima
    report = driver.run_hierarchy(toy_config(h=100.0))
    assert report.totals["n_psp"] == 0
    assert report.totals["front_size"] >= 1


def test_rb_strategy_select():
    probe = lambda space: space.q0  # noqa: E731
    # empty pool: fall back to a fresh space
    assert driver.rb_strategy_select([], probe, 0.1, 0.1, 40) is None
    # an exact space (q = 0) qualifies and wins
    good = SimpleNamespace(dim=3, id=1, q0=0.0)
    bad = SimpleNamespace(dim=3, id=0, q0=1.0)
    assert driver.rb_strategy_select([bad, good], probe, 0.1, 0.1, 40) is good
    # ties break to the lower id (first in pool order)
    a = SimpleNamespace(dim=3, id=0, q0=1e-4)
    b = SimpleNamespace(dim=3, id=1, q0=1e-4)
    assert driver.rb_strategy_select([a, b], probe, 0.1, 0.1, 40) is a
    # over-sized spaces are skipped
    big = SimpleNamespace(dim=41, id=2, q0=0.0)
    assert driver.rb_strategy_select([big], probe, 0.1, 0.1, 40) is None


def test_brute_force_density_one_is_corner_subset(bench4):
    _, fom, cost = bench4
    params, J = driver.brute_force_front(fom, cost, 1)
    free = cost.u_b > cost.u_a
    for u in params:
        assert all(u[j] in (cost.u_a[j], cost.u_b[j])
                   for j in range(len(u)) if free[j])
    assert len(params) <= 2 ** int(np.sum(free))
    with pytest.raises(ValueError):
        driver.brute_force_front(fom, cost, 0)


def test_export_deterministic(tmp_path):
    cfg = toy_config(h=0.5)
    for d in ("a", "b"):
        report = driver.run_hierarchy(cfg)
        driver.export_report(report, tmp_path / d, render_plots=False)
    assert filecmp.cmp(tmp_path / "a" / "front.csv",
                       tmp_path / "b" / "front.csv", shallow=False)


def test_export_contents(tmp_path, toy_report):
    paths = driver.export_report(toy_report, tmp_path, render_plots=True)
    J = driver.load_front_csv(paths["front"])
    assert len(J) == toy_report.totals["front_size"]
    assert np.allclose(np.sort(J, axis=0),
                       np.sort(toy_report.archive.objective_matrix(), axis=0),
                       atol=1e-12)
    assert (paths["plots"] / "front.png").exists()
    assert paths["report"].exists() and paths["traces"].exists()


def test_config_roundtrip(tmp_path):
    cfg = make_config(8, removal="t3", backend="rb-local")
    path = tmp_path / "cfg.toml"
    driver.save_config(cfg, path)
    clone = driver.load_config(path)
    assert clone.to_dict() == cfg.to_dict()


def test_config_validation():
    with pytest.raises(ValueError):
        driver.ExperimentConfig(backend="bogus")
    with pytest.raises(ValueError):
        driver.ExperimentConfig(removal="bogus")
    with pytest.raises(ValueError):
        driver.ExperimentConfig(sigma_omega=[1.0, 1.0], sigma_u=[1.0])


def test_rb_local_small_benchmark_consistency():
    cfg = make_config(6, h=0.1, backend="rb-local", removal="t3")
    report = driver.run_hierarchy(cfg)
    dims = [s.n_basis_final for s in report.psp_stats if s.kind == "ps"]
    if dims:
        assert np.isclose(report.totals["avg_basis_dim"], np.mean(dims))
    assert report.totals["n_converged"] <= report.totals["n_psp"]
    # every converged scalarized solve reached first-order accuracy
    for s in report.psp_stats:
        if s.kind == "ps" and s.converged:
            assert s.g_final <= 1e-6
    # the archive agrees with a full-order re-evaluation of its points
    _, fom, cost = report_problem(cfg)
    for rec in report.archive.records:
        J = np.array([fom.eval_cost(cost, rec.u, i) for i in range(cost.k)])
        assert np.linalg.norm(J - rec.J) < 1e-9


def report_problem(cfg):
    fom, cost = driver.build_problem(cfg)
    return cfg, fom, cost
