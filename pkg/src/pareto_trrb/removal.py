"""Basis-removal strategies applied right after each reduced-space
enrichment.

T1 drops basis functions whose Fourier-coefficient share in the new
snapshots falls below a tolerance.  T2 removes candidates in ascending
share order while six robustness conditions all stay satisfied, then
re-adds the last removed function; variants differ in how the gradient
error at the provisional steepest-descent point is measured (estimator,
true error, or the pre-removal space as surrogate truth).  T3 subtracts
margins from each condition's right-hand side so the loop stops one
candidate earlier, before an important basis function is touched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import trrb
from .rb import RBSpace
from .trrb import TRConfig

__all__ = ["RemovalConfig", "zeta_scores", "t1_remove", "t2_remove",
           "check_conditions"]

STRATEGIES = ("none", "t1", "t2", "t2a", "t2b", "t3")


@dataclass
class RemovalConfig:
    strategy: str = "none"
    fourier_tol: float = 1e-6
    t3_margin: float = 1e-6
    # per-vector cap on the Fourier coefficient against the current
    # accepted-point snapshots; keeps their reproduction intact after
    # condition-guarded removal
    snapshot_guard: float = 1e-8

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown removal strategy {self.strategy!r}")
        if self.fourier_tol <= 0.0:
            raise ValueError("fourier_tol must be positive")
        if self.t3_margin < 0.0:
            raise ValueError("margins must be nonnegative")
        if self.snapshot_guard < 0.0:
            raise ValueError("snapshot_guard must be nonnegative")

    def margins(self) -> np.ndarray:
        m = self.t3_margin if self.strategy == "t3" else 0.0
        return np.full(6, m)


def zeta_scores(rb: RBSpace, snapshots) -> np.ndarray:
    """Per-basis-function relevance: the largest normalized squared
    Fourier coefficient over the given snapshots."""
    ell = rb.dim
    zeta = np.zeros(ell)
    for v in snapshots:
        c = rb.fourier_coefficients(v)
        total = float(c @ c)
        if total <= 0.0:
            continue
        zeta = np.maximum(zeta, c ** 2 / total)
    return zeta


def t1_remove(rb: RBSpace, zeta: np.ndarray, tol: float) -> list[int]:
    """Remove every basis function with score below tol; returns the
    removed (original) indices."""
    idx = [n for n in range(rb.dim) if zeta[n] < tol]
    for n in reversed(idx):
        rb.remove_basis(n)
    return idx


def _proj_gnorm(model, x, grad):
    return float(np.linalg.norm(x - model.project(x - grad)))


def check_conditions(model, x_plus, x_prov, tr_info, tr_cfg: TRConfig,
                     variant: str, margins: np.ndarray,
                     grad_truth_prov: np.ndarray | None) -> int | None:
    """Evaluate the six stop conditions on the current (post-removal)
    space; returns the index (0-5) of the first one that holds, or None.

    ``grad_truth_prov`` is the fixed reference gradient at the
    provisional point (full-order for the true-error variants, the
    pre-removal reduced gradient for the surrogate variant); None under
    the plain estimator variant.
    """
    delta = tr_info["delta_next"]
    grad_tol = min(tr_cfg.tau_grad, tr_cfg.beta_grad * delta)

    # (a) provisional point still deep inside the trust region
    if trrb.q_ratio(model, x_prov) > tr_cfg.beta_q * delta - margins[0]:
        return 0

    # (b) relative gradient error at the provisional point
    g_prov = model.grad(x_prov)
    denom = float(np.linalg.norm(g_prov))
    if variant == "t2":
        num = model.grad_error_est(x_prov)
    else:
        num = float(np.linalg.norm(g_prov - grad_truth_prov))
    if denom <= 0.0 or num / denom > grad_tol - margins[1]:
        return 1

    # (c) full-vs-reduced gradient mismatch at the accepted point
    g_plus = model.grad(x_plus)
    denom = float(np.linalg.norm(g_plus))
    num = float(np.linalg.norm(g_plus - tr_info["grad_full"]))
    if denom <= 0.0 or num / denom > grad_tol - margins[2]:
        return 2

    # (d) stationarity-measure mismatch at the accepted point
    g_red = _proj_gnorm(model, x_plus, g_plus)
    g_full = _proj_gnorm(model, x_plus, tr_info["grad_full"])
    if g_red <= 0.0 or abs(g_full - g_red) / g_red > tr_cfg.tau_g - margins[3]:
        return 3

    # (e) sufficient decrease against the previous AGC value
    if model.cost(x_plus) > tr_info["J_l_agc_prev"] - margins[4]:
        return 4

    # (f) the provisional point is still a Cauchy point
    move2 = float(np.sum((x_prov - x_plus) ** 2))
    if model.cost(x_prov) - tr_info["J_full"] > \
            -tr_cfg.kappa_arm * move2 - margins[5]:
        return 5

    return None


def t2_remove(model, x_plus, tr_info, snapshots, cfg: RemovalConfig,
              tr_cfg: TRConfig) -> dict:
    """Condition-guarded removal on the just-enriched space behind
    ``model`` (which must expose .rb, cost/grad/error estimates and the
    box).  Mutates the space in place; returns a per-call record."""
    rb = model.rb
    variant = "t2a" if cfg.strategy == "t3" else cfg.strategy
    margins = cfg.margins()
    record = {"strategy": cfg.strategy, "examined": 0, "removed": 0,
              "trigger": None}
    if tr_info is None or rb.dim <= 1:
        return record

    delta = tr_info["delta_next"]
    x_prov = trrb.agc_point(model, x_plus, delta, tr_cfg)
    grad_truth_prov = None
    if variant in ("t2a",):
        grad_truth_prov = model.full_grad(x_prov)
    elif variant == "t2b":
        grad_truth_prov = model.grad(x_prov)  # pre-removal space as truth
    zeta = zeta_scores(rb, snapshots)
    # never touch basis vectors that carry a visible share of the
    # accepted-point state snapshot: the six conditions have coarse
    # relative tolerances and cannot protect state reproduction on
    # their own
    if snapshots:
        coef_cap = np.abs(rb.fourier_coefficients(snapshots[0]))
    else:
        coef_cap = np.zeros(rb.dim)
    order = sorted((n for n in range(rb.dim)
                    if coef_cap[n] <= cfg.snapshot_guard),
                   key=lambda n: (zeta[n], n))

    removed: list[int] = []
    backup = None
    for n in order:
        if rb.dim <= 1:
            break
        # conditions are evaluated on the current space before each
        # removal; the first pass checks the just-enriched space itself
        record["examined"] += 1
        trig = check_conditions(model, x_plus, x_prov, tr_info, tr_cfg,
                                variant, margins, grad_truth_prov)
        if trig is not None:
            record["trigger"] = "abcdef"[trig]
            if removed:
                rb.__dict__.update(backup.__dict__)  # re-add the last one
                removed.pop()
            break
        # map the original index to the current one
        cur = n - sum(1 for r in removed if r < n)
        backup = rb.copy()
        rb.remove_basis(cur)
        removed.append(n)
    else:
        # candidate list exhausted: validate the final state too
        if removed and check_conditions(
                model, x_plus, x_prov, tr_info, tr_cfg, variant, margins,
                grad_truth_prov) is not None:
            rb.__dict__.update(backup.__dict__)
            removed.pop()
    record["removed"] = len(removed)
    return record
