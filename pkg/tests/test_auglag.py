"""Augmented Lagrangian reformulation of the scalarized subproblems."""

import numpy as np
import pytest

from pareto_trrb import auglag, moo, trrb
from pareto_trrb.auglag import (ALConfig, ExactALModel, PSProblem, RBALModel,
                                minimize_single_objective, solve_ps)
from pareto_trrb.rb import RBSpace

from conftest import random_u


def make_ps(bench, I=(0, 1), z=None):
    _, fom, cost = bench
    if z is None:
        z = np.zeros(len(I))
    C_J = auglag.cost_upper_bound(fom, cost)
    # the costs are nonnegative, so zero is a valid ideal-point bound
    y_id = np.zeros(len(I))
    return PSProblem.from_reference(I, z, np.ones(len(I)), y_id, C_J)


def make_x(model, u, t=None, s=None):
    k = model.ps.k_I
    if t is None:
        t = 0.5 * (model.ps.t_min + model.ps.t_max)
    if s is None:
        s = np.zeros(k)
    return np.concatenate([u, [t], np.asarray(s, dtype=float)])


def test_psproblem_validation():
    with pytest.raises(ValueError):
        PSProblem((0, 1), [0, 0], [1, -1], 0.0, 1.0)
    with pytest.raises(ValueError):
        PSProblem((0, 1), [0, 0], [1, 1], 1.0, 1.0)


def test_cost_upper_bound_dominates_samples(bench8, rng):
    _, fom, cost = bench8
    C_J = auglag.cost_upper_bound(fom, cost)
    for u in random_u(cost, rng, 5):
        for i in range(cost.k):
            assert fom.eval_cost(cost, u, i) <= C_J


def test_constraint_values_and_lagrangian(bench8):
    _, fom, cost = bench8
    ps = make_ps(bench8)
    model = ExactALModel(fom, cost, ps, np.zeros(2), 10.0)
    u = np.array([2.0, 1.0, 1.0, 1.0, 0.3])
    J = np.array([fom.eval_cost(cost, u, i) for i in ps.I])
    t = 0.7
    s = np.array([0.2, 0.0])
    x = make_x(model, u, t, s)
    c = model.constraints(x)
    assert np.allclose(c, (J - ps.z) / ps.r - t + s, atol=1e-12)
    # with lam = 0 and c = 0 the augmented Lagrangian is t + shift
    t_feas = float(np.max((J - ps.z) / ps.r))
    s_feas = t_feas - (J - ps.z) / ps.r
    x_feas = make_x(model, u, t_feas, s_feas)
    assert np.allclose(model.constraints(x_feas), 0.0, atol=1e-12)
    assert np.isclose(model.cost(x_feas), t_feas + model.shift, atol=1e-12)


def test_lagrangian_lower_bound_and_positivity(bench8, rng):
    # completing the square: L_A + shift >= t + t_min-based shift > 0
    _, fom, cost = bench8
    ps = make_ps(bench8)
    lam = np.array([0.3, 1.2])
    mu = 7.0
    model = ExactALModel(fom, cost, ps, lam, mu)
    for u in random_u(cost, rng, 3):
        t = rng.uniform(ps.t_min, ps.t_max)
        s = rng.uniform(0.0, 1.0, size=2)
        x = model.project(make_x(model, u, t, s))
        val = model.cost(x)
        # lam c + mu/2 c^2 >= -sum lam^2 / (2 mu), so with the shift the
        # modeled cost stays >= t + 1 - t_min > 0
        assert val >= t + 1.0 - ps.t_min - 1e-9
        assert val > 0.0


def test_completing_square_identity(bench8, rng):
    # lam c + mu/2 c^2 = mu/2 (c + lam/mu)^2 - lam^2/(2 mu)
    _, fom, cost = bench8
    ps = make_ps(bench8)
    lam = np.array([0.5, 2.0])
    mu = 4.0
    model = ExactALModel(fom, cost, ps, lam, mu)
    u = random_u(cost, rng)
    x = model.project(make_x(model, u, 0.3, np.array([0.1, 0.4])))
    c = model.constraints(x)
    direct = model.cost(x)
    via_square = (x[model.fom.m + 1]
                  + 0.5 * mu * float(np.sum((c + lam / mu) ** 2))
                  - float(np.sum(lam ** 2)) / (2 * mu) + model.shift)
    assert np.isclose(direct, via_square, atol=1e-10)


def test_shift_with_zero_multipliers(bench8):
    _, fom, cost = bench8
    ps = make_ps(bench8)
    model = ExactALModel(fom, cost, ps, np.zeros(2), 10.0)
    assert np.isclose(model.shift, 1.0 - ps.t_min, atol=1e-14)


def test_gradient_structure(bench8, rng):
    _, fom, cost = bench8
    ps = make_ps(bench8)
    lam = np.array([0.2, 0.7])
    mu = 3.0
    model = ExactALModel(fom, cost, ps, lam, mu)
    u = random_u(cost, rng)
    x = make_x(model, u, 0.4, np.array([0.3, 0.1]))
    g = model.grad(x)
    c = model.constraints(x)
    w = lam + mu * c
    m1 = fom.m + 1
    # dt component is 1 - sum w, ds components are w
    assert np.isclose(g[m1], 1.0 - np.sum(w), atol=1e-12)
    assert np.allclose(g[m1 + 1:], w, atol=1e-12)


def test_gradient_finite_differences(bench8, rng):
    _, fom, cost = bench8
    ps = make_ps(bench8)
    model = ExactALModel(fom, cost, ps, np.array([0.1, 0.5]), 5.0)
    u = random_u(cost, rng)
    x = make_x(model, u, 0.4, np.array([0.2, 0.3]))
    g = model.grad(x)
    fd = np.zeros_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = 1e-6 * (abs(x[j]) + 1.0)
        fd[j] = (model.cost(x + e) - model.cost(x - e)) / (2 * e[j])
    assert np.linalg.norm(g - fd) < 1e-5 * max(1.0, np.linalg.norm(fd))


def test_hessian_vec_symmetry_and_fd(bench8, rng):
    _, fom, cost = bench8
    ps = make_ps(bench8)
    model = ExactALModel(fom, cost, ps, np.array([0.1, 0.5]), 5.0)
    u = random_u(cost, rng)
    x = make_x(model, u, 0.4, np.array([0.2, 0.3]))
    h1 = rng.standard_normal(len(x))
    h2 = rng.standard_normal(len(x))
    a = h2 @ model.hess_vec(x, h1)
    b = h1 @ model.hess_vec(x, h2)
    assert abs(a - b) < 1e-10 * max(1.0, abs(a))
    eps = 1e-6
    fd = (model.grad(x + eps * h1) - model.grad(x - eps * h1)) / (2 * eps)
    Hh = model.hess_vec(x, h1)
    assert np.linalg.norm(Hh - fd) < 1e-4 * max(1.0, np.linalg.norm(fd))


def test_optimal_slacks_stationarity(bench8, rng):
    # ds L_A = lam + mu c = 0 at the unclipped optimal slacks
    _, fom, cost = bench8
    ps = make_ps(bench8)
    lam = np.array([0.3, 0.6])
    mu = 8.0
    model = ExactALModel(fom, cost, ps, lam, mu)
    u = random_u(cost, rng)
    J = np.array([fom.eval_cost(cost, u, i) for i in ps.I])
    t = float(np.max((J - ps.z) / ps.r)) + 0.5
    s = auglag._optimal_slacks(model, u, t, J)
    x = make_x(model, u, t, s)
    g = model.grad(x)
    m1 = fom.m + 1
    interior = (s > model.lower[m1 + 1:] + 1e-12) \
        & (s < model.upper[m1 + 1:] - 1e-12)
    assert np.allclose(g[m1 + 1:][interior], 0.0, atol=1e-9)


def test_argmin_invariance_in_lam_mu(bench8):
    # the feasible minimizer of the PS problem is a stationary point of
    # L_A for any (lam, mu) once the slacks are at their optimum
    _, fom, cost = bench8
    ps = make_ps(bench8, I=(2,), z=np.array([0.0]))
    res = solve_ps(ps, np.array([2.0, 1.0, 1.0, 1.0, 0.3]), fom, cost)
    assert res.converged
    # k = 1 degenerate PS recovers the single-objective minimizer
    u_star = cost.u_d[2]
    assert np.linalg.norm(res.u - u_star) < 1e-4
    assert np.isclose(res.t, fom.eval_cost(cost, u_star, 2) - ps.z[0],
                      atol=1e-5)


def test_rb_model_matches_exact_on_provenance(bench8):
    _, fom, cost = bench8
    ps = make_ps(bench8)
    u = np.array([2.0, 1.0, 1.0, 1.0, 0.3])
    rb = RBSpace.init_space(fom, cost, u)
    lam = np.array([0.2, 0.9])
    model = RBALModel(rb, ps, lam, 6.0)
    x = make_x(model, u, 0.4, np.array([0.1, 0.2]))
    assert np.isclose(model.cost(x), model.full_cost(x), atol=1e-9)
    assert np.allclose(model.grad(x), model.full_grad(x), atol=1e-8)
    assert model.error_est(x) < 1e-7


def test_rb_error_estimates_bound_truth(bench8, rng):
    _, fom, cost = bench8
    ps = make_ps(bench8)
    rb = RBSpace.init_space(fom, cost, np.array([2.0, 1.0, 1.0, 1.0, 0.3]))
    lam = np.array([0.2, 0.9])
    model = RBALModel(rb, ps, lam, 6.0)
    for u in random_u(cost, rng, 5):
        x = model.project(make_x(model, u, 0.4, np.array([0.1, 0.2])))
        err = abs(model.cost(x) - model.full_cost(x))
        assert err <= model.error_est(x) + 1e-12
        gerr = np.linalg.norm(model.grad(x) - model.full_grad(x))
        assert gerr <= model.grad_error_est(x) + 1e-12


def test_solve_ps_feasibility_decreases(bench8):
    _, fom, cost = bench8
    ps = make_ps(bench8, z=np.array([0.01, 0.01]))
    res = solve_ps(ps, np.array([2.0, 1.0, 1.0, 1.0, 0.3]), fom, cost)
    assert res.converged
    assert res.c_norm <= 1e-6
    assert res.g_final <= 1e-6
    # the returned point is weakly efficient for the scalarization:
    # no sampled admissible point scores a lower max-ratio
    val = moo.scalarize(ps.z, ps.r,
                        [fom.eval_cost(cost, res.u, i) for i in ps.I])
    assert np.isclose(val, res.t, atol=1e-5)


def test_solve_ps_reduced_backend_agrees(bench8):
    _, fom, cost = bench8
    ps = make_ps(bench8, z=np.array([0.01, 0.01]))
    u0 = np.array([2.0, 1.0, 1.0, 1.0, 0.3])
    res_fe = solve_ps(ps, u0, fom, cost)
    rb = RBSpace.init_space(fom, cost, u0)
    res_rb = solve_ps(ps, u0, fom, cost, rb=rb)
    assert res_rb.converged
    J_fe = [fom.eval_cost(cost, res_fe.u, i) for i in ps.I]
    J_rb = [fom.eval_cost(cost, res_rb.u, i) for i in ps.I]
    assert np.linalg.norm(np.array(J_fe) - J_rb) < 1e-5


def test_minimize_single_objective(bench8):
    _, fom, cost = bench8
    u0 = np.array([2.0, 2.0, 2.0, 2.0, 0.3])
    u, stats = minimize_single_objective(2, u0, fom, cost)
    assert stats["final_g"] <= 1e-6
    assert np.linalg.norm(u - cost.u_d[2]) < 1e-6
