"""Min-max scalarized subproblems solved by a safeguarded augmented
Lagrangian loop.

The scalarization min t s.t. (J_i(u) - z_i)/r_i <= t over the index set I
is rewritten with slacks s_i >= 0 into equality constraints

    c_i(x) = (J_i(u) - z_i)/r_i - t + s_i = 0,   x = (u, t, s),

and the augmented Lagrangian L_A = t + sum lam_i c_i + mu/2 sum c_i^2 is
minimized over a box.  A constant shift keeps the cost strictly positive
so that the relative error estimate of the trust-region loop is
well-defined.  Two inner solvers are supported: exact projected
Newton-CG on the full-order model and the error-aware trust-region loop
on a reduced-basis surrogate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import CostSpec, FullOrderModel
from .rb import RBSpace
from . import trrb
from .trrb import TRConfig

__all__ = ["PSProblem", "ALConfig", "PSResult", "cost_upper_bound",
           "ExactALModel", "RBALModel", "SingleObjExactModel",
           "SingleObjRBModel", "solve_ps", "minimize_single_objective"]


def cost_upper_bound(fom: FullOrderModel, cost: CostSpec) -> float:
    """Upper bound C_J on every objective over the admissible box.

    The parameter part is maximized over box corners coordinate-wise;
    the tracking part uses ||S(u)||_H <= ||F||_V' / alpha_min.
    """
    alpha_min = float(cost.u_a.min())
    state_bound = fom.dual_norm_V(fom.c.F) / alpha_min
    best = 0.0
    for i in range(cost.k):
        d2 = np.maximum((cost.u_a - cost.u_d[i]) ** 2,
                        (cost.u_b - cost.u_d[i]) ** 2)
        val = 0.5 * cost.sigma_U[i] * float(np.sum(d2))
        if cost.sigma_Omega[i] != 0.0:
            y_norm = fom.norm_H(cost.y_Omega[i])
            val += 0.5 * cost.sigma_Omega[i] * (state_bound + y_norm) ** 2
        best = max(best, val)
    return best


@dataclass
class PSProblem:
    """One scalarized subproblem: reference point z and direction r over
    the sorted index set I, plus the variable bounds."""

    I: tuple
    z: np.ndarray  # over I
    r: np.ndarray  # over I
    t_min: float
    t_max: float

    def __post_init__(self):
        self.I = tuple(sorted(self.I))
        self.z = np.asarray(self.z, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        if np.any(self.r <= 0.0):
            raise ValueError("target direction must be positive")
        if self.t_min >= self.t_max:
            raise ValueError("need t_min < t_max")

    @property
    def k_I(self) -> int:
        return len(self.I)

    @classmethod
    def from_reference(cls, I, z, r, y_id_I, C_J) -> "PSProblem":
        z = np.asarray(z, dtype=float)
        r = np.asarray(r, dtype=float)
        t_min = float(np.min((np.asarray(y_id_I, dtype=float) - z) / r)) - 1.0
        t_max = float(np.max((C_J - z) / r)) + 1.0
        return cls(I, z, r, t_min, t_max)


@dataclass
class ALConfig:
    tau_ec: float = 1e-6
    tau_foc: float = 1e-6
    lam0: float = 0.0
    mu0: float = 10.0
    mu_factor: float = 10.0
    c_decrease: float = 0.25
    max_outer: int = 30
    mu_max: float = 1e10
    omega0: float = 1e-3
    omega_factor: float = 0.1


@dataclass
class PSResult:
    u: np.ndarray
    t: float
    s: np.ndarray
    lam: np.ndarray
    mu: float
    converged: bool
    c_norm: float
    g_final: float
    n_outer: int
    stats: dict = field(default_factory=dict)


class _BoxModel:
    """Shared box-projection plumbing for the solver model protocol."""

    lower: np.ndarray
    upper: np.ndarray

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)


class ExactALModel(_BoxModel):
    """Augmented Lagrangian on the full-order model; the error estimate
    is zero, so the trust region is inactive."""

    def __init__(self, fom: FullOrderModel, cost: CostSpec, ps: PSProblem,
                 lam: np.ndarray, mu: float):
        self.fom = fom
        self.cost_spec = cost
        self.ps = ps
        self.lam = np.asarray(lam, dtype=float)
        self.mu = float(mu)
        self.shift = 1.0 - (ps.t_min - float(np.sum(self.lam ** 2)) / (2.0 * mu))
        k_I = ps.k_I
        self.lower = np.concatenate([cost.u_a, [ps.t_min], np.zeros(k_I)])
        s_max = np.maximum(-self.lam / mu + ps.z + ps.t_max, 0.0)
        self.upper = np.concatenate([cost.u_b, [ps.t_max], s_max])
        self._cache: dict = {}

    def split(self, x):
        m1 = self.fom.m + 1
        return x[:m1], float(x[m1]), x[m1 + 1:]

    def _point(self, u):
        key = tuple(u)
        pt = self._cache.get(key)
        if pt is None:
            y = None
            if any(self.cost_spec.sigma_Omega[i] != 0.0 for i in self.ps.I):
                y = self.fom.solve_state(u)
            J = np.empty(self.ps.k_I)
            p = [None] * self.ps.k_I
            for a, i in enumerate(self.ps.I):
                J[a] = self.fom.eval_cost(self.cost_spec, u, i, y)
            pt = {"y": y, "J": J, "p": p, "grad": [None] * self.ps.k_I}
            if len(self._cache) > 8:
                self._cache.clear()
            self._cache[key] = pt
        return pt

    def _grad_J(self, u, pt, a):
        if pt["grad"][a] is None:
            i = self.ps.I[a]
            if pt["p"][a] is None and self.cost_spec.sigma_Omega[i] != 0.0:
                pt["p"][a] = self.fom.solve_adjoint(self.cost_spec, u, pt["y"], i)
            pt["grad"][a] = self.fom.eval_gradient(self.cost_spec, u, i,
                                                   pt["y"], pt["p"][a])
        return pt["grad"][a]

    def constraints(self, x) -> np.ndarray:
        u, t, s = self.split(x)
        J = self._point(u)["J"]
        return (J - self.ps.z) / self.ps.r - t + s

    def cost_value(self, x) -> float:
        u, t, s = self.split(x)
        c = self.constraints(x)
        return (t + float(self.lam @ c) + 0.5 * self.mu * float(c @ c)
                + self.shift)

    # model protocol ------------------------------------------------------

    def cost(self, x) -> float:
        return self.cost_value(x)

    def grad(self, x) -> np.ndarray:
        u, t, s = self.split(x)
        pt = self._point(u)
        c = self.constraints(x)
        w = self.lam + self.mu * c
        gu = np.zeros_like(u)
        for a in range(self.ps.k_I):
            gu += (w[a] / self.ps.r[a]) * self._grad_J(u, pt, a)
        return np.concatenate([gu, [1.0 - float(np.sum(w))], w])

    def hess_vec(self, x, h) -> np.ndarray:
        u, t, s = self.split(x)
        pt = self._point(u)
        c = self.constraints(x)
        w = self.lam + self.mu * c
        m1 = len(u)
        hu, ht, hs = h[:m1], float(h[m1]), h[m1 + 1:]
        out_u = np.zeros(m1)
        d = np.empty(self.ps.k_I)
        for a, i in enumerate(self.ps.I):
            gJ = self._grad_J(u, pt, a)
            d[a] = float(gJ @ hu) / self.ps.r[a] - ht + hs[a]
            if pt["p"][a] is None and self.cost_spec.sigma_Omega[i] != 0.0:
                pt["p"][a] = self.fom.solve_adjoint(self.cost_spec, u, pt["y"], i)
            Hh = self.fom.eval_hessian_vec(self.cost_spec, u, i, hu,
                                           pt["y"], pt["p"][a])
            out_u += (w[a] / self.ps.r[a]) * Hh
            out_u += (self.mu * d[a] / self.ps.r[a]) * gJ
        return np.concatenate([out_u, [-self.mu * float(np.sum(d))],
                               self.mu * d])

    def error_est(self, x) -> float:
        return 0.0

    def full_cost(self, x) -> float:
        return self.cost_value(x)

    def full_grad(self, x) -> np.ndarray:
        return self.grad(x)

    def rb_dim(self) -> int:
        return 0

    def enrich_at(self, x, tr_info) -> None:
        pass


class RBALModel(_BoxModel):
    """Augmented Lagrangian on a reduced-basis surrogate with combined
    a-posteriori error estimates for the trust-region loop."""

    def __init__(self, rb: RBSpace, ps: PSProblem, lam: np.ndarray, mu: float,
                 enrich_hook=None):
        self.rb = rb
        self.fom = rb.fom
        self.cost_spec = rb.cost
        self.ps = ps
        self.lam = np.asarray(lam, dtype=float)
        self.mu = float(mu)
        self.shift = 1.0 - (ps.t_min - float(np.sum(self.lam ** 2)) / (2.0 * mu))
        cost = rb.cost
        k_I = ps.k_I
        self.lower = np.concatenate([cost.u_a, [ps.t_min], np.zeros(k_I)])
        s_max = np.maximum(-self.lam / mu + ps.z + ps.t_max, 0.0)
        self.upper = np.concatenate([cost.u_b, [ps.t_max], s_max])
        self.enrich_hook = enrich_hook
        self._exact = ExactALModel(rb.fom, rb.cost, ps, lam, mu)

    def split(self, x):
        m1 = self.fom.m + 1
        return x[:m1], float(x[m1]), x[m1 + 1:]

    def _red_point(self, u):
        a = self.rb.rb_solve_state(u)
        J = np.empty(self.ps.k_I)
        grads = []
        b = []
        for idx, i in enumerate(self.ps.I):
            bi = self.rb.rb_solve_adjoint(u, i, a)
            b.append(bi)
            J[idx] = self.rb.rb_cost(u, i, a)
            grads.append(self.rb.rb_gradient(u, i, a, bi))
        return a, b, J, grads

    def constraints(self, x) -> np.ndarray:
        u, t, s = self.split(x)
        _, _, J, _ = self._red_point(u)
        return (J - self.ps.z) / self.ps.r - t + s

    # model protocol ------------------------------------------------------

    def cost(self, x) -> float:
        u, t, s = self.split(x)
        c = self.constraints(x)
        return (t + float(self.lam @ c) + 0.5 * self.mu * float(c @ c)
                + self.shift)

    def grad(self, x) -> np.ndarray:
        u, t, s = self.split(x)
        _, _, J, grads = self._red_point(u)
        c = (J - self.ps.z) / self.ps.r - t + s
        w = self.lam + self.mu * c
        gu = np.zeros_like(u)
        for a in range(self.ps.k_I):
            gu += (w[a] / self.ps.r[a]) * grads[a]
        return np.concatenate([gu, [1.0 - float(np.sum(w))], w])

    def hess_vec(self, x, h) -> np.ndarray:
        u, t, s = self.split(x)
        av, bv, J, grads = self._red_point(u)
        c = (J - self.ps.z) / self.ps.r - t + s
        w = self.lam + self.mu * c
        m1 = len(u)
        hu, ht, hs = h[:m1], float(h[m1]), h[m1 + 1:]
        out_u = np.zeros(m1)
        d = np.empty(self.ps.k_I)
        for a, i in enumerate(self.ps.I):
            d[a] = float(grads[a] @ hu) / self.ps.r[a] - ht + hs[a]
            Hh = self.rb.rb_hessian_vec(u, i, hu, av, bv[a])
            out_u += (w[a] / self.ps.r[a]) * Hh
            out_u += (self.mu * d[a] / self.ps.r[a]) * grads[a]
        return np.concatenate([out_u, [-self.mu * float(np.sum(d))],
                               self.mu * d])

    def error_est(self, x) -> float:
        u, t, s = self.split(x)
        est = self.rb.estimate_errors(u)
        _, _, J, _ = self._red_point(u)
        c = np.abs((J - self.ps.z) / self.ps.r - t + s)
        dc = est.delta_J[list(self.ps.I)] / self.ps.r
        return float(np.sum((self.lam + self.mu * c) * dc)
                     + 0.5 * self.mu * np.sum(dc ** 2))

    def grad_error_est(self, x) -> float:
        """Conservative bound on the full-vs-reduced gradient gap of the
        augmented Lagrangian, from the per-objective estimators."""
        u, t, s = self.split(x)
        est = self.rb.estimate_errors(u)
        _, _, J, grads = self._red_point(u)
        c = np.abs((J - self.ps.z) / self.ps.r - t + s)
        total = 0.0
        for a in range(self.ps.k_I):
            i = self.ps.I[a]
            dc = est.delta_J[i] / self.ps.r[a]
            dg = est.delta_gradJ[i] / self.ps.r[a]
            w_bar = self.lam[a] + self.mu * (c[a] + dc)
            gl = float(np.linalg.norm(grads[a])) / self.ps.r[a]
            # u-part, then the t and s components of the gradient error
            total += w_bar * dg + self.mu * dc * (gl + dg) + 2.0 * self.mu * dc
        return total

    def full_cost(self, x) -> float:
        return self._exact.cost_value(x)

    def full_grad(self, x) -> np.ndarray:
        return self._exact.grad(x)

    def full_constraints(self, x) -> np.ndarray:
        return self._exact.constraints(x)

    def rb_dim(self) -> int:
        return self.rb.dim

    def enrich_at(self, x, tr_info) -> None:
        u, _, _ = self.split(x)
        if self.enrich_hook is not None:
            self.enrich_hook(self, x, tr_info)
        else:
            self.rb.enrich(u)


class SingleObjExactModel(_BoxModel):
    """One objective plus a unit shift on the full-order model."""

    def __init__(self, fom: FullOrderModel, cost: CostSpec, i: int):
        self.fom = fom
        self.cost_spec = cost
        self.i = i
        self.lower = cost.u_a
        self.upper = cost.u_b
        self._cache: dict = {}

    def _yp(self, u):
        key = tuple(u)
        pt = self._cache.get(key)
        if pt is None:
            y = None
            p = None
            if self.cost_spec.sigma_Omega[self.i] != 0.0:
                y = self.fom.solve_state(u)
                p = self.fom.solve_adjoint(self.cost_spec, u, y, self.i)
            pt = (y, p)
            if len(self._cache) > 8:
                self._cache.clear()
            self._cache[key] = pt
        return pt

    def cost(self, u) -> float:
        y, _ = self._yp(u)
        return self.fom.eval_cost(self.cost_spec, u, self.i, y) + 1.0

    def grad(self, u) -> np.ndarray:
        y, p = self._yp(u)
        return self.fom.eval_gradient(self.cost_spec, u, self.i, y, p)

    def hess_vec(self, u, h) -> np.ndarray:
        y, p = self._yp(u)
        return self.fom.eval_hessian_vec(self.cost_spec, u, self.i, h, y, p)

    def error_est(self, u) -> float:
        return 0.0

    def full_cost(self, u) -> float:
        return self.cost(u)

    def full_grad(self, u) -> np.ndarray:
        return self.grad(u)

    def rb_dim(self) -> int:
        return 0

    def enrich_at(self, u, tr_info) -> None:
        pass


class SingleObjRBModel(_BoxModel):
    """One objective plus a unit shift on the reduced-basis surrogate."""

    def __init__(self, rb: RBSpace, i: int, enrich_hook=None):
        self.rb = rb
        self.fom = rb.fom
        self.cost_spec = rb.cost
        self.i = i
        self.lower = rb.cost.u_a
        self.upper = rb.cost.u_b
        self.enrich_hook = enrich_hook
        self._exact = SingleObjExactModel(rb.fom, rb.cost, i)

    def cost(self, u) -> float:
        return self.rb.rb_cost(u, self.i) + 1.0

    def grad(self, u) -> np.ndarray:
        return self.rb.rb_gradient(u, self.i)

    def hess_vec(self, u, h) -> np.ndarray:
        return self.rb.rb_hessian_vec(u, self.i, h)

    def error_est(self, u) -> float:
        return float(self.rb.estimate_errors(u).delta_J[self.i])

    def grad_error_est(self, u) -> float:
        return float(self.rb.estimate_errors(u).delta_gradJ[self.i])

    def full_cost(self, u) -> float:
        return self._exact.cost(u)

    def full_grad(self, u) -> np.ndarray:
        return self._exact.grad(u)

    def rb_dim(self) -> int:
        return self.rb.dim

    def enrich_at(self, u, tr_info) -> None:
        if self.enrich_hook is not None:
            self.enrich_hook(self, u, tr_info)
        else:
            self.rb.enrich(np.asarray(u, dtype=float))


def _optimal_slacks(model, u, t, J_red):
    """Componentwise minimizer of L_A in s for fixed (u, t), clipped to
    the slack box."""
    ps, lam, mu = model.ps, model.lam, model.mu
    s = -(J_red - ps.z) / ps.r + t - lam / mu
    m1 = len(u)
    lo = model.lower[m1 + 1:]
    hi = model.upper[m1 + 1:]
    return np.clip(s, lo, hi)


def solve_ps(ps: PSProblem, u0: np.ndarray, fom: FullOrderModel,
             cost: CostSpec, tr_cfg: TRConfig | None = None,
             al_cfg: ALConfig | None = None, rb: RBSpace | None = None,
             enrich_hook=None, trace: list | None = None) -> PSResult:
    """Safeguarded augmented Lagrangian loop around one scalarized
    subproblem.  With ``rb`` given the inner solver is the error-aware
    trust-region loop, otherwise exact projected Newton-CG."""
    tr_cfg = tr_cfg or TRConfig()
    al_cfg = al_cfg or ALConfig()
    k_I = ps.k_I
    lam = np.full(k_I, al_cfg.lam0)
    mu = al_cfg.mu0
    omega = al_cfg.omega0
    u = cost.project(np.asarray(u0, dtype=float))
    t = None
    c_norm_old = np.inf
    stats = {"inner_iterations": 0, "enrichments": 0, "skips": 0,
             "inner_calls": 0}
    converged = False
    x = None
    model = None
    for outer in range(al_cfg.max_outer):
        if rb is not None:
            model = RBALModel(rb, ps, lam, mu, enrich_hook=enrich_hook)
        else:
            model = ExactALModel(fom, cost, ps, lam, mu)
        J0 = model._point(u)["J"] if rb is None else model._red_point(u)[2]
        if t is None:
            t = float(np.clip(np.max((J0 - ps.z) / ps.r),
                              ps.t_min, ps.t_max))
        s = _optimal_slacks(model, u, t, J0)
        x = np.concatenate([u, [t], s])
        inner_tau = max(omega, al_cfg.tau_foc / 10.0)
        if rb is not None:
            cfg = TRConfig(**{**tr_cfg.__dict__, "tau_foc": inner_tau})
            x, inner_stats = trrb.optimize(model, x, cfg, trace=trace)
            g = inner_stats["final_g"]
            stats["inner_iterations"] += inner_stats["outer_iterations"]
            stats["enrichments"] += inner_stats["enrichments"]
            stats["skips"] += inner_stats["skips"]
        else:
            x, info = trrb.solve_subproblem(model, x, np.inf, tr_cfg,
                                            tau_sub=inner_tau)
            g = trrb.proj_grad_norm(model, x)
            stats["inner_iterations"] += info["iterations"]
        stats["inner_calls"] += 1
        u, t, s = model.split(x)
        c = model.constraints(x)
        c_norm = float(np.max(np.abs(c))) if k_I else 0.0
        if c_norm <= al_cfg.tau_ec and inner_tau <= al_cfg.tau_foc:
            lam = np.maximum(0.0, lam + mu * c)
            converged = True
            break
        lam = np.maximum(0.0, lam + mu * c)
        if c_norm > al_cfg.c_decrease * c_norm_old:
            mu = min(mu * al_cfg.mu_factor, al_cfg.mu_max)
        c_norm_old = c_norm
        omega = max(omega * al_cfg.omega_factor, al_cfg.tau_foc / 10.0)
    else:
        outer = al_cfg.max_outer - 1
        c = model.constraints(x)
        c_norm = float(np.max(np.abs(c))) if k_I else 0.0
        g = trrb.proj_grad_norm(model, x)
    return PSResult(u=u, t=t, s=s, lam=lam, mu=mu, converged=converged,
                    c_norm=c_norm, g_final=g, n_outer=outer + 1, stats=stats)


def minimize_single_objective(i: int, u0: np.ndarray, fom: FullOrderModel,
                              cost: CostSpec, tr_cfg: TRConfig | None = None,
                              rb: RBSpace | None = None, enrich_hook=None,
                              trace: list | None = None):
    """Minimize one objective over the box; returns (u, stats)."""
    tr_cfg = tr_cfg or TRConfig()
    if rb is not None:
        model = SingleObjRBModel(rb, i, enrich_hook=enrich_hook)
        u, stats = trrb.optimize(model, u0, tr_cfg, trace=trace)
        return u, stats
    model = SingleObjExactModel(fom, cost, i)
    u, info = trrb.solve_subproblem(model, np.asarray(u0, dtype=float),
                                    np.inf, tr_cfg, tau_sub=tr_cfg.tau_foc)
    stats = {"outer_iterations": info["iterations"], "enrichments": 0,
             "skips": 0, "converged": info["converged"],
             "final_g": trrb.proj_grad_norm(model, u)}
    return u, stats
