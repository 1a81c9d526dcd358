"""Experiment orchestration: the hierarchical reference-point loop over
all objective index sets, backend dispatch (full-order, one common
reduced space, or a pool of local spaces), brute-force reference fronts
and result export."""

from __future__ import annotations

import concurrent.futures
import csv
import itertools
import json
import time
from dataclasses import dataclass, field, asdict

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import moo, removal, trrb
from .auglag import (ALConfig, PSProblem, RBALModel, SingleObjRBModel,
                     cost_upper_bound, minimize_single_objective, solve_ps)
from .fem import (CostSpec, FullOrderModel, assemble_components,
                  build_unit_square_mesh)
from .rb import RBSpace
from .removal import RemovalConfig
from .trrb import TRConfig

__all__ = ["ExperimentConfig", "RunReport", "load_config", "save_config",
           "build_problem", "run_hierarchy", "brute_force_front",
           "export_report", "rb_strategy_select"]

BACKENDS = ("fe", "rb-common", "rb-local")


@dataclass
class ExperimentConfig:
    """Full description of one experiment; round-trips through TOML."""

    # mesh and model constants
    n_per_side: int = 36
    split_points: list = field(default_factory=lambda: [0.5])
    alpha: float = 0.0
    reaction: float = 1.0
    ambient: float = 0.0
    source_coefficients: list = field(
        default_factory=lambda: [2.76, -0.96, 0.51, -1.66])
    # cost specification
    sigma_omega: list = field(default_factory=lambda: [1.0, 1.0, 0.0])
    sigma_u: list = field(default_factory=lambda: [0.002, 0.002, 0.05])
    y_omega: list = field(default_factory=lambda: ["left", "right", "none"])
    u_d: list = field(default_factory=lambda: [
        [2.0, 0.0, 0.0, 0.0, 0.3],
        [2.0, 0.0, 0.0, 0.0, 0.3],
        [2.0, 1.0, 1.0, 1.0, 0.3]])
    u_a: list = field(default_factory=lambda: [2.0, 0.1, 0.1, 0.1, 0.3])
    u_b: list = field(default_factory=lambda: [2.0, 4.0, 4.0, 4.0, 0.3])
    # reference-point method
    h: float = 0.003
    tilde_d: list = field(default_factory=lambda: [0.001, 0.001, 0.001])
    r_direction: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    # solvers
    backend: str = "rb-local"
    removal: str = "none"
    fourier_tol: float = 1e-6
    t3_margin: float = 1e-6
    ell_max: int = 40
    tr: dict = field(default_factory=dict)  # TRConfig overrides
    al: dict = field(default_factory=dict)  # ALConfig overrides
    seed: int = 0
    jobs: int = 1
    rb_checkpoint: str | None = None

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        RemovalConfig(strategy=self.removal)  # validates the name
        k = len(self.sigma_omega)
        if not (len(self.sigma_u) == len(self.y_omega) == len(self.u_d) == k):
            raise ValueError("cost spec fields disagree on the number "
                             "of objectives")
        if np.isscalar(self.tilde_d):
            self.tilde_d = [float(self.tilde_d)] * k
        if np.isscalar(self.r_direction):
            self.r_direction = [float(self.r_direction)] * k

    @property
    def k(self) -> int:
        return len(self.sigma_omega)

    def tr_config(self) -> TRConfig:
        cfg = TRConfig(**self.tr)
        cfg.ell_max = self.ell_max
        return cfg

    def al_config(self) -> ALConfig:
        return ALConfig(**self.al)

    def removal_config(self) -> RemovalConfig:
        return RemovalConfig(strategy=self.removal,
                             fourier_tol=self.fourier_tol,
                             t3_margin=self.t3_margin)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: v for k, v in d.items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)


def load_config(path) -> ExperimentConfig:
    text = open(path, "rb").read()
    if str(path).endswith(".json"):
        return ExperimentConfig.from_dict(json.loads(text))
    return ExperimentConfig.from_dict(tomllib.loads(text.decode()))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)} to TOML")


def save_config(cfg: ExperimentConfig, path) -> None:
    d = cfg.to_dict()
    tables = {k: v for k, v in d.items() if isinstance(v, dict)}
    with open(path, "w") as fh:
        for k, v in d.items():
            if k not in tables:
                fh.write(f"{k} = {_toml_value(v)}\n")
        for name, tab in tables.items():
            fh.write(f"\n[{name}]\n")
            for k, v in tab.items():
                fh.write(f"{k} = {_toml_value(v)}\n")


def _quadrant_source(split_points, coefficients):
    bounds = [0.0] + sorted(float(s) for s in split_points) + [1.0]
    n_blocks = len(bounds) - 1

    def block_of(c):
        for b in range(n_blocks):
            if c < bounds[b + 1] + 1e-12:
                return b
        return n_blocks - 1

    def source(x):
        return coefficients[block_of(x[0]) * n_blocks + block_of(x[1])]

    return source


def _desired_state(name, nodes):
    x = nodes[:, 0]
    if name is None or name == "none":
        return None
    if name == "left":
        v = np.where(x < 0.5, 1.0, 0.0)
        v[np.isclose(x, 0.5)] = 0.5
        return v
    if name == "right":
        v = np.where(x > 0.5, 1.0, 0.0)
        v[np.isclose(x, 0.5)] = 0.5
        return v
    if name == "ones":
        return np.ones(len(nodes))
    arr = np.asarray(name, dtype=float)
    if arr.shape != (len(nodes),):
        raise ValueError(f"unknown desired state {name!r}")
    return arr


def build_problem(cfg: ExperimentConfig) -> tuple[FullOrderModel, CostSpec]:
    mesh = build_unit_square_mesh(cfg.n_per_side, tuple(cfg.split_points))
    m = mesh.n_subdomains
    if len(cfg.source_coefficients) != m:
        raise ValueError(f"need {m} source coefficients")
    src = _quadrant_source(cfg.split_points, list(cfg.source_coefficients))
    comp = assemble_components(mesh, reaction=cfg.reaction, source=src,
                               ambient=cfg.ambient, alpha=cfg.alpha)
    fom = FullOrderModel(mesh, comp)
    y_om = [_desired_state(name, mesh.nodes) for name in cfg.y_omega]
    for i, s in enumerate(cfg.sigma_omega):
        if s != 0.0 and y_om[i] is None:
            raise ValueError(f"objective {i} tracks the state but has no "
                             "desired state")
    cost = CostSpec(sigma_Omega=cfg.sigma_omega, sigma_U=cfg.sigma_u,
                    y_Omega=y_om, u_d=cfg.u_d, u_a=cfg.u_a, u_b=cfg.u_b)
    return fom, cost


@dataclass
class PSPStat:
    kind: str  # "individual" or "ps"
    I: tuple
    z: list | None
    converged: bool
    t: float
    g_final: float
    full_solves: int
    enrichments: int
    removed: int
    n_basis_final: int
    wall_time_s: float
    space_id: int | None = None


@dataclass
class RunReport:
    archive: moo.ParetoArchive
    records: list  # all UTZRecord entries, including pruned duplicates
    psp_stats: list
    totals: dict
    config: dict
    ideal: np.ndarray
    nadir: dict
    payoff: np.ndarray
    traces: list = field(default_factory=list)
    removal_records: list = field(default_factory=list)


def rb_strategy_select(pool: list, probe, delta0: float, beta_q: float,
                       ell_max: int):
    """Pick the pool space with the smallest initial error ratio among
    those with q0 < beta_q * delta0 and dim <= ell_max; ties break to the
    lower id.  Returns None when no space qualifies."""
    best = None
    best_q = None
    for space in pool:
        if space.dim > ell_max or space.dim == 0:
            continue
        try:
            q0 = probe(space)
        except np.linalg.LinAlgError:
            continue
        if q0 < beta_q * delta0 and (best_q is None or q0 < best_q):
            best, best_q = space, q0
    return best


class _HierarchyRun:
    """Mutable state of one driver run."""

    def __init__(self, cfg: ExperimentConfig, fom=None, cost=None):
        self.cfg = cfg
        if fom is None or cost is None:
            fom, cost = build_problem(cfg)
        self.fom = fom
        self.cost = cost
        self.tr_cfg = cfg.tr_config()
        self.al_cfg = cfg.al_config()
        self.rem_cfg = cfg.removal_config()
        self.pool: list[RBSpace] = []
        self.common: RBSpace | None = None
        self.traces: list = []
        self.removal_records: list = []
        self.psp_stats: list[PSPStat] = []
        self.archive = moo.ParetoArchive()
        self.records: list[moo.UTZRecord] = []

    # -- reduced-space plumbing ------------------------------------------

    def _enrich_hook(self):
        rem_cfg, tr_cfg = self.rem_cfg, self.tr_cfg
        records = self.removal_records

        def hook(model, x, tr_info):
            u = np.asarray(x, dtype=float)[: self.fom.m + 1]
            snaps = model.rb.enrich(u)
            if rem_cfg.strategy == "t1":
                zeta = removal.zeta_scores(model.rb, snaps)
                removed = removal.t1_remove(model.rb, zeta, rem_cfg.fourier_tol)
                records.append({"strategy": "t1", "space": model.rb.id,
                                "examined": model.rb.dim + len(removed),
                                "removed": len(removed), "trigger": None})
            elif rem_cfg.strategy in ("t2", "t2a", "t2b", "t3"):
                rec = removal.t2_remove(model, x, tr_info, snaps, rem_cfg,
                                        tr_cfg)
                rec["space"] = model.rb.id
                records.append(rec)

        return hook if rem_cfg.strategy != "none" else \
            (lambda model, x, tr_info:
             model.rb.enrich(np.asarray(x, dtype=float)[: self.fom.m + 1]))

    def _space_for(self, u0, probe):
        """Common space, or local-pool selection with fresh fallback."""
        if self.cfg.backend == "rb-common":
            if self.common is None:
                self.common = RBSpace.init_space(self.fom, self.cost, u0)
            return self.common
        chosen = rb_strategy_select(self.pool, probe, self.tr_cfg.delta0,
                                    self.tr_cfg.beta_q, self.cfg.ell_max)
        if chosen is None:
            chosen = RBSpace.init_space(self.fom, self.cost, u0)
            self.pool.append(chosen)
        return chosen

    # -- objective bookkeeping -------------------------------------------

    def full_J(self, u) -> np.ndarray:
        y = None
        if np.any(self.cost.sigma_Omega != 0.0):
            y = self.fom.solve_state(u)
        return np.array([self.fom.eval_cost(self.cost, u, i, y)
                         for i in range(self.cost.k)])

    # -- phases -----------------------------------------------------------

    def _start_points(self) -> list[np.ndarray]:
        """Box midpoint plus the corners of the free coordinates.

        The objectives are non-convex, so a single descent run can land
        in a local minimum and corrupt the ideal point that anchors the
        whole hierarchy.  With many free coordinates a random sample of
        corners is used instead of the full set.
        """
        mid = self.cost.project(0.5 * (self.cost.u_a + self.cost.u_b))
        free = np.flatnonzero(self.cost.u_b > self.cost.u_a)
        starts = [mid]
        n_free = len(free)
        if n_free == 0:
            return starts
        if 2 ** n_free <= 16:
            corners = itertools.product((0, 1), repeat=n_free)
        else:
            rng = np.random.default_rng(self.cfg.seed)
            corners = rng.integers(0, 2, size=(16, n_free))
        for bits in corners:
            u = mid.copy()
            u[free] = np.where(np.asarray(bits) == 1,
                               self.cost.u_b[free], self.cost.u_a[free])
            starts.append(u)
        return starts

    def individual_minimizations(self):
        k = self.cost.k
        starts = self._start_points()
        self.minimizers = []
        hook = self._enrich_hook()
        for j in range(k):
            t0 = time.perf_counter()
            solves0 = self.fom.n_solves
            space = None
            best = None
            for u0 in starts:
                if self.cfg.backend == "fe":
                    u, stats = minimize_single_objective(
                        j, u0, self.fom, self.cost, self.tr_cfg,
                        trace=self.traces)
                else:
                    def probe(space, j=j, u0=u0):
                        return trrb.q_ratio(SingleObjRBModel(space, j), u0)
                    space = self._space_for(u0, probe)
                    u, stats = minimize_single_objective(
                        j, u0, self.fom, self.cost, self.tr_cfg, rb=space,
                        enrich_hook=hook, trace=self.traces)
                val = self.fom.eval_cost(self.cost, u, j)
                if best is None or val < best[0]:
                    best = (val, u, stats)
            u, stats = best[1], best[2]
            self.minimizers.append(u)
            self.psp_stats.append(PSPStat(
                kind="individual", I=(j,), z=None,
                converged=bool(stats.get("converged", True)),
                t=0.0, g_final=float(stats.get("final_g", np.nan)),
                full_solves=self.fom.n_solves - solves0,
                enrichments=stats.get("enrichments", 0),
                removed=0, n_basis_final=space.dim if space else 0,
                wall_time_s=time.perf_counter() - t0,
                space_id=space.id if space else None))
        self.payoff = np.array([self.full_J(u) for u in self.minimizers])
        # row j minimizes objective j; guard with the column minimum
        self.ideal = np.minimum(np.diag(self.payoff), self.payoff.min(axis=0))
        self.tilde_y = moo.shifted_ideal(self.ideal, self.cfg.tilde_d)
        r = np.asarray(self.cfg.r_direction, dtype=float)
        for j in range(k):
            rec = moo.UTZRecord(u=self.minimizers[j],
                                t=self.cfg.tilde_d[j] / r[j],
                                z=np.array([self.tilde_y[j]]), I=(j,),
                                J_full=self.payoff[j])
            self.records.append(rec)
            self.archive.add(moo.ArchiveRecord(
                u=self.minimizers[j], J=self.payoff[j],
                t=rec.t, z=rec.z, I=(j,),
                stats={"kind": "individual"}))

    def _solve_reference_point(self, I, face, z, C_J, hook):
        """One scalarized subproblem; returns (result, J_full, stat)."""
        r = np.asarray(self.cfg.r_direction, dtype=float)
        I_list = list(I)
        ps = PSProblem.from_reference(I, z, r[I_list], self.ideal[I_list],
                                      C_J)
        u0 = self.minimizers[face]
        t0 = time.perf_counter()
        solves0 = self.fom.n_solves
        space = None
        if self.cfg.backend == "fe":
            res = solve_ps(ps, u0, self.fom, self.cost, self.tr_cfg,
                           self.al_cfg, trace=self.traces)
        else:
            lam0 = np.full(len(I), self.al_cfg.lam0)

            def probe(space, ps=ps, u0=u0, lam0=lam0):
                model = RBALModel(space, ps, lam0, self.al_cfg.mu0)
                J0 = model._red_point(u0)[2]
                t_init = float(np.clip(np.max((J0 - ps.z) / ps.r),
                                       ps.t_min, ps.t_max))
                x0 = np.concatenate([u0, [t_init], np.zeros(len(I))])
                return trrb.q_ratio(model, x0)

            space = self._space_for(u0, probe)
            res = solve_ps(ps, u0, self.fom, self.cost, self.tr_cfg,
                           self.al_cfg, rb=space, enrich_hook=hook,
                           trace=self.traces)
        J_full = self.full_J(res.u)
        stat = PSPStat(
            kind="ps", I=tuple(I), z=list(map(float, z)),
            converged=res.converged, t=res.t, g_final=res.g_final,
            full_solves=self.fom.n_solves - solves0,
            enrichments=res.stats.get("enrichments", 0),
            removed=0, n_basis_final=space.dim if space else 0,
            wall_time_s=time.perf_counter() - t0,
            space_id=space.id if space else None)
        return res, J_full, stat

    def reference_point_loop(self):
        k = self.cost.k
        r = np.asarray(self.cfg.r_direction, dtype=float)
        C_J = cost_upper_bound(self.fom, self.cost)
        hook = self._enrich_hook()
        singleton_t = {rec.I[0]: rec.t for rec in self.records
                       if len(rec.I) == 1}
        for card in range(2, k + 1):
            for I in itertools.combinations(range(k), card):
                I_list = list(I)
                sub = [rec for rec in self.records if set(rec.I) < set(I)]
                nadir = {j: max(rec.J_full[j] for rec in sub) for j in I}
                t_bar = {i: singleton_t.get(i, 0.0) for i in I}
                grid = moo.build_grid(I, self.cfg.h, self.tilde_y, r, nadir,
                                      t_bar)
                remaining = [(face, z) for face, z in grid
                             if not moo.redundancy_filter(z, I, sub, r)]
                remaining.sort(key=lambda fz: (fz[0], tuple(fz[1])))
                parallel = (self.cfg.jobs > 1 and self.cfg.backend == "fe")
                while remaining:
                    batch_n = self.cfg.jobs if parallel else 1
                    batch = remaining[:batch_n]
                    remaining = remaining[batch_n:]
                    if parallel and len(batch) > 1:
                        with concurrent.futures.ThreadPoolExecutor(
                                max_workers=self.cfg.jobs) as ex:
                            outs = list(ex.map(
                                lambda fz: self._solve_reference_point(
                                    I, fz[0], fz[1], C_J, hook), batch))
                    else:
                        outs = [self._solve_reference_point(
                            I, fz[0], fz[1], C_J, hook) for fz in batch]
                    for (face, z), (res, J_full, stat) in zip(batch, outs):
                        self.psp_stats.append(stat)
                        if not res.converged:
                            continue
                        rec = moo.UTZRecord(u=res.u, t=res.t, z=np.asarray(z),
                                            I=I, J_full=J_full)
                        self.records.append(rec)
                        self.archive.add(moo.ArchiveRecord(
                            u=res.u, J=J_full, t=res.t, z=np.asarray(z), I=I,
                            stats={"kind": "ps",
                                   "n_basis_final": stat.n_basis_final,
                                   "full_solves": stat.full_solves,
                                   "wall_time_s": stat.wall_time_s}))
                        remaining, pruned = moo.interval_removal(
                            remaining, z, res.u, res.t, J_full[I_list],
                            r[I_list])
                        for face_p, z_p in pruned:
                            self.records.append(moo.UTZRecord(
                                u=res.u, t=res.t, z=z_p, I=I, J_full=J_full))

    def finish(self) -> RunReport:
        front = self.archive.filter_nondominated()
        basis_dims = [s.n_basis_final for s in self.psp_stats
                      if s.kind == "ps"]
        totals = {
            "wall_time_s": sum(s.wall_time_s for s in self.psp_stats),
            "full_solves": sum(s.full_solves for s in self.psp_stats),
            "enrichments": sum(s.enrichments for s in self.psp_stats),
            "removals": sum(r["removed"] for r in self.removal_records),
            "n_psp": sum(1 for s in self.psp_stats if s.kind == "ps"),
            "n_converged": sum(1 for s in self.psp_stats
                               if s.kind == "ps" and s.converged),
            "archive_size": len(self.archive.records),
            "front_size": len(front.records),
            "avg_basis_dim": float(np.mean(basis_dims)) if basis_dims else 0.0,
            "max_basis_dim": int(max(basis_dims)) if basis_dims else 0,
        }
        return RunReport(archive=front, records=self.records,
                         psp_stats=self.psp_stats, totals=totals,
                         config=self.cfg.to_dict(), ideal=self.ideal,
                         nadir={}, payoff=self.payoff, traces=self.traces,
                         removal_records=self.removal_records)


def run_hierarchy(cfg: ExperimentConfig, fom: FullOrderModel | None = None,
                  cost: CostSpec | None = None) -> RunReport:
    """Run the full hierarchical reference-point method (Pareto front of
    all objective subsets) and return the report."""
    run = _HierarchyRun(cfg, fom, cost)
    if cfg.rb_checkpoint and cfg.backend == "rb-common":
        try:
            run.common = RBSpace.load(cfg.rb_checkpoint, run.fom, run.cost)
        except FileNotFoundError:
            pass
    run.individual_minimizations()
    run.reference_point_loop()
    report = run.finish()
    if cfg.rb_checkpoint and cfg.backend == "rb-common" and run.common:
        run.common.save(cfg.rb_checkpoint)
    return report


def brute_force_front(fom: FullOrderModel, cost: CostSpec,
                      density: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference front from a uniform lattice over the free parameters.

    Returns (parameters, objectives) of the non-dominated lattice points.
    """
    if density < 1:
        raise ValueError("density must be >= 1")
    free = np.where(cost.u_b > cost.u_a)[0]
    axes = [np.linspace(cost.u_a[j], cost.u_b[j], max(density, 2))
            if j in free else np.array([cost.u_a[j]])
            for j in range(len(cost.u_a))]
    if density == 1:
        axes = [np.array([cost.u_a[j], cost.u_b[j]]) if j in free
                else np.array([cost.u_a[j]]) for j in range(len(cost.u_a))]
    grids = np.meshgrid(*axes, indexing="ij")
    params = np.column_stack([g.ravel() for g in grids])
    track = np.any(cost.sigma_Omega != 0.0)
    J = np.empty((len(params), cost.k))
    for n, u in enumerate(params):
        y = fom.solve_state(u) if track else None
        J[n] = [fom.eval_cost(cost, u, i, y) for i in range(cost.k)]
    keep = moo.non_dominance_filter(J)
    return params[keep], J[keep]


def export_report(report: RunReport, out_dir, render_plots: bool = True):
    """Write the archive CSV, the JSON report, the per-subproblem traces
    and (optionally) the figures; returns the paths written."""
    import pathlib

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k = len(report.ideal)
    paths = {}

    front_csv = out / "front.csv"
    with open(front_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        m1 = len(report.archive.records[0].u) if report.archive.records else 0
        # no timing columns: re-runs with the same config and seed must
        # produce a byte-identical file
        header = (["I"] + [f"z_{j + 1}" for j in range(k)]
                  + [f"u_{j + 1}" for j in range(m1)]
                  + [f"J_{j + 1}" for j in range(k)]
                  + ["t", "n_basis_final", "n_full_solves"])
        w.writerow(header)
        for rec in report.archive.records:
            z_full = [""] * k
            if rec.z is not None:
                for a, j in enumerate(rec.I):
                    z_full[j] = repr(float(np.atleast_1d(rec.z)[a]))
            w.writerow(["+".join(str(j + 1) for j in rec.I)]
                       + z_full + [repr(float(v)) for v in rec.u]
                       + [repr(float(v)) for v in rec.J]
                       + [repr(float(rec.t)),
                          rec.stats.get("n_basis_final", 0),
                          rec.stats.get("full_solves", 0)])
    paths["front"] = front_csv

    report_json = out / "report.json"
    doc = {"totals": report.totals, "config": report.config,
           "ideal": report.ideal.tolist(),
           "payoff": report.payoff.tolist(),
           "psp_stats": [asdict(s) for s in report.psp_stats],
           "removal_records": report.removal_records}
    with open(report_json, "w") as fh:
        json.dump(doc, fh, indent=1)
    paths["report"] = report_json

    traces_path = out / "traces.jsonl"
    with open(traces_path, "w") as fh:
        for entry in report.traces:
            fh.write(json.dumps(entry) + "\n")
    paths["traces"] = traces_path

    if render_plots:
        from . import plots
        paths["plots"] = plots.render_report(report, out / "plots")
    return paths


def load_front_csv(path) -> np.ndarray:
    """Objective matrix from a front CSV written by export_report."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = sorted(c for c in rows[0] if c.startswith("J_"))
    return np.array([[float(r[c]) for c in cols] for r in rows])
