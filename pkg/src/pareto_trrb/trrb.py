"""Adaptive trust-region solver driven by a reduced-order model whose
trust region is the relative a-posteriori error estimate q = Delta/J.

The model object must provide reduced cost/grad/hess_vec, the cost error
estimate, full cost/grad, a box projection and an enrichment hook; an
exact model (zero estimate, full == reduced) turns ``solve_subproblem``
into a plain projected Newton-CG, which is what the full-order backend
uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["TRConfig", "q_ratio", "agc_point", "solve_subproblem",
           "rho_ratio", "skip_enrichment_flag", "optimize"]


@dataclass
class TRConfig:
    delta0: float = 0.1
    beta1: float = 0.5
    eta_rho: float = 0.75
    beta_bound: float = 0.95
    tau_sub: float = 1e-8
    tau_foc: float = 1e-6
    kappa: float = 0.5
    kappa_arm: float = 1e-4
    beta_q: float = 0.1
    beta_grad: float = 0.5
    tau_g: float = 0.1
    tau_grad: float = 0.1
    delta_min: float = 1e-6
    ell_max: int = 40
    max_outer: int = 100
    max_inner: int = 200


def q_ratio(model, x) -> float:
    """Relative cost error estimate; the trust-region constraint."""
    est = model.error_est(x)
    if est == 0.0:
        return 0.0
    return est / model.cost(x)


def proj_grad_norm(model, x, grad=None) -> float:
    if grad is None:
        grad = model.grad(x)
    return float(np.linalg.norm(x - model.project(x - grad)))


def agc_point(model, x, delta, cfg: TRConfig, alpha_cap: int = 60):
    """Projected backtracked gradient step satisfying the Armijo-type
    decrease and staying inside the trust region."""
    d = model.grad(x)
    if np.linalg.norm(d) == 0.0:
        return model.project(x)
    f0 = model.cost(x)
    for alpha in range(alpha_cap + 1):
        step = cfg.kappa ** alpha
        cand = model.project(x - step * d)
        move2 = float(np.sum((cand - x) ** 2))
        if move2 == 0.0:
            return cand
        decrease_ok = model.cost(cand) - f0 <= -(cfg.kappa_arm / step) * move2
        if decrease_ok and q_ratio(model, cand) <= delta:
            return cand
    raise RuntimeError("AGC backtracking failed: reduced model and gradient "
                       "are inconsistent")


def _active_mask(model, x, grad, eps=1e-12):
    lo, hi = model.lower, model.upper
    at_lo = x <= lo + eps
    at_hi = x >= hi - eps
    fixed = hi - lo <= eps
    return fixed | (at_lo & (grad > 0.0)) | (at_hi & (grad < 0.0))


def _truncated_cg(hess_vec, g, free, maxiter):
    """Steihaug-truncated CG for H d = -g restricted to the free set."""
    n = len(g)
    d = np.zeros(n)
    r = -g.copy()
    r[~free] = 0.0
    rr = r @ r
    if rr == 0.0:
        return d
    tol2 = min(0.25, np.sqrt(rr)) * rr
    p = r.copy()
    for _ in range(maxiter):
        Hp = hess_vec(p)
        Hp[~free] = 0.0
        pHp = p @ Hp
        if pHp <= 1e-14 * (p @ p):
            # negative/zero curvature: fall back to steepest descent if at start
            return d if d @ d > 0.0 else r
        a = rr / pHp
        d = d + a * p
        r = r - a * Hp
        rr_new = r @ r
        if rr_new <= tol2:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return d


def solve_subproblem(model, x_start, delta, cfg: TRConfig,
                     tau_sub: float | None = None) -> tuple[np.ndarray, dict]:
    """Projected Newton-CG from x_start, keeping q(x) <= delta.

    Terminates at projected-gradient norm <= tau_sub or once the iterate
    sits in the band beta_bound*delta <= q <= delta near the TR boundary.
    """
    tau = cfg.tau_sub if tau_sub is None else tau_sub
    x = np.asarray(x_start, dtype=float).copy()
    info = {"iterations": 0, "converged": False, "boundary": False}
    for it in range(cfg.max_inner):
        g = model.grad(x)
        gl = proj_grad_norm(model, x, g)
        if gl <= tau:
            info["converged"] = True
            break
        if np.isfinite(delta):
            q = q_ratio(model, x)
            if cfg.beta_bound * delta <= q <= delta:
                info["boundary"] = True
                break
        free = ~_active_mask(model, x, g)
        if not np.any(free):
            info["converged"] = True
            break
        d = _truncated_cg(lambda h: model.hess_vec(x, h), g, free,
                          maxiter=2 * int(np.sum(free)) + 10)
        f0 = model.cost(x)
        accepted = False
        for d_try in (d, -g):
            step = 1.0
            while step >= 1e-14:
                cand = model.project(x + step * d_try)
                move = cand - x
                if move @ move == 0.0:
                    break
                armijo = model.cost(cand) <= f0 + 1e-4 * (g @ move)
                inside = (not np.isfinite(delta)) or q_ratio(model, cand) <= delta
                if armijo and inside:
                    x = cand
                    accepted = True
                    break
                step *= 0.5
            if accepted:
                break
        info["iterations"] = it + 1
        if not accepted:
            break
    return x, info


def rho_ratio(full_old, full_new, red_old, red_new) -> float:
    """Actual-over-predicted decrease; degenerate denominators map to 1
    when the numerator also vanishes, else to a clamped value."""
    num = full_old - full_new
    den = red_old - red_new
    if abs(den) < 1e-14:
        if abs(num) < 1e-14:
            return 1.0
        return 2.0 if num > 0.0 else 0.0
    return num / den


def skip_enrichment_flag(model, x_next, delta_next, full_grad,
                         cfg: TRConfig) -> bool:
    """True when the reduced model is already accurate enough at the
    accepted point that adding snapshots would be redundant."""
    if q_ratio(model, x_next) > cfg.beta_q * delta_next:
        return False
    red_grad = model.grad(x_next)
    g_full = float(np.linalg.norm(x_next - model.project(x_next - full_grad)))
    g_red = proj_grad_norm(model, x_next, red_grad)
    if g_red < 1e-14:
        if g_full >= 1e-14:
            return False
    elif abs(g_full - g_red) / g_red > cfg.tau_g:
        return False
    denom = float(np.linalg.norm(red_grad))
    if denom < 1e-14:
        return float(np.linalg.norm(full_grad)) < 1e-14
    rel = float(np.linalg.norm(red_grad - full_grad)) / denom
    return rel <= min(cfg.tau_grad, cfg.beta_grad * delta_next)


def optimize(model, x0, cfg: TRConfig, trace: list | None = None):
    """Error-aware trust-region loop with AGC warm starts, a three-branch
    acceptance test and optional enrichment skipping.

    The model must already be initialized (enriched) at x0.  Returns the
    final iterate and a stats dict.
    """
    x = model.project(np.asarray(x0, dtype=float))
    delta = cfg.delta0
    stats = {"outer_iterations": 0, "accepted": 0, "rejected": 0,
             "enrichments": 0, "skips": 0, "converged": False,
             "final_g": np.inf}
    skip_prev = False

    def enrich(x_at, tr_info):
        stats["enrichments"] += 1
        model.enrich_at(x_at, tr_info)

    for j in range(cfg.max_outer):
        stats["outer_iterations"] = j + 1
        x_agc = agc_point(model, x, delta, cfg)
        J_l_agc = model.cost(x_agc)
        x_next, sub_info = solve_subproblem(model, x_agc, delta, cfg)
        J_l_next = model.cost(x_next)
        est_next = model.error_est(x_next)
        entry = {"j": j, "delta": delta, "q": q_ratio(model, x_next),
                 "inner": sub_info["iterations"], "ell": model.rb_dim()}

        if J_l_next + est_next < J_l_agc:
            branch = "sufficient"
            full_next = model.full_cost(x_next)
            full_grad = model.full_grad(x_next)
            g = float(np.linalg.norm(x_next - model.project(x_next - full_grad)))
            rho = rho_ratio(model.full_cost(x), full_next,
                            model.cost(x), J_l_next)
            delta_next = delta
            stats["accepted"] += 1
            if g <= cfg.tau_foc:
                x = x_next
                stats["converged"] = True
                stats["final_g"] = g
                entry.update(branch=branch, g=g, rho=rho)
                if trace is not None:
                    trace.append(entry)
                break
            if rho >= cfg.eta_rho:
                delta_next = delta / cfg.beta1
            skip = skip_enrichment_flag(model, x_next, delta_next,
                                        full_grad, cfg)
            if skip:
                stats["skips"] += 1
            else:
                enrich(x_next, {"delta_next": delta_next,
                                "J_l_agc_prev": J_l_agc,
                                "J_full": full_next,
                                "grad_full": full_grad})
            skip_prev = skip
            x = x_next
            delta = delta_next
            entry.update(branch=branch, g=g, rho=rho, skipped=skip)
        elif J_l_next - est_next > J_l_agc:
            branch = "necessary-fail"
            if cfg.beta1 * delta <= cfg.delta_min or skip_prev:
                enrich(x_next, None)
                skip_prev = False
            stats["rejected"] += 1
            delta = cfg.beta1 * delta
            entry.update(branch=branch)
        else:
            branch = "ambiguous"
            full_next = model.full_cost(x_next)
            full_grad = model.full_grad(x_next)
            g = float(np.linalg.norm(x_next - model.project(x_next - full_grad)))
            rho = rho_ratio(model.full_cost(x), full_next,
                            model.cost(x), J_l_next)
            delta_next = delta / cfg.beta1
            entry.update(branch=branch, g=g, rho=rho)
            if g <= cfg.tau_foc:
                x = x_next
                stats["accepted"] += 1
                stats["converged"] = True
                stats["final_g"] = g
                if trace is not None:
                    trace.append(entry)
                break
            skip = skip_enrichment_flag(model, x_next, delta_next,
                                        full_grad, cfg)
            if skip and rho >= cfg.eta_rho:
                stats["accepted"] += 1
                stats["skips"] += 1
                skip_prev = True
                x = x_next
                delta = delta_next
            elif full_next <= J_l_agc:
                stats["accepted"] += 1
                if rho < cfg.eta_rho:
                    delta_next = delta
                enrich(x_next, {"delta_next": delta_next,
                                "J_l_agc_prev": J_l_agc,
                                "J_full": full_next,
                                "grad_full": full_grad})
                skip_prev = False
                x = x_next
                delta = delta_next
            else:
                if cfg.beta1 * delta <= cfg.delta_min or skip_prev:
                    enrich(x_next, None)
                    skip_prev = False
                stats["rejected"] += 1
                delta = cfg.beta1 * delta
        if trace is not None:
            trace.append(entry)
    else:
        full_grad = model.full_grad(x)
        stats["final_g"] = float(
            np.linalg.norm(x - model.project(x - full_grad)))
        return x, stats

    if stats["converged"]:
        stats["final_g"] = min(stats["final_g"],
                               float(np.linalg.norm(
                                   x - model.project(x - model.full_grad(x)))))
    return x, stats
