"""Multi-objective primitives: dominance relations, Pareto archives, the
min-max scalarization, shifted-ideal reference grids and the redundancy
filters of the hierarchical reference-point loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "dominates_strictly",
    "dominates_weakly",
    "non_dominance_filter",
    "scalarize",
    "ideal_point",
    "shifted_ideal",
    "t_D",
    "project_to_D",
    "build_grid",
    "redundancy_filter",
    "interval_removal",
    "coverage",
    "ParetoArchive",
    "ArchiveRecord",
    "UTZRecord",
]


def dominates_strictly(x, y) -> bool:
    """x <= y componentwise and x != y."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("objective vectors must share an index set")
    return bool(np.all(x <= y) and np.any(x < y))


def dominates_weakly(x, y) -> bool:
    """x < y componentwise (used for weak Pareto optimality)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("objective vectors must share an index set")
    return bool(np.all(x < y))


def non_dominance_filter(points) -> list[int]:
    """Indices of the points not strictly dominated by any other point."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    keep = []
    for i in range(n):
        le = np.all(pts <= pts[i], axis=1)
        lt = np.any(pts < pts[i], axis=1)
        if not np.any(le & lt):
            keep.append(i)
    return keep


def scalarize(z, r, x) -> float:
    """g_{z,r}(x) = max_i (x_i - z_i) / r_i."""
    z, r, x = (np.asarray(v, dtype=float) for v in (z, r, x))
    if np.any(r <= 0.0):
        raise ValueError("target direction must be positive")
    return float(np.max((x - z) / r))


def ideal_point(objective_values) -> np.ndarray:
    """Componentwise minimum over the individual minimizers' objectives."""
    vals = np.asarray(objective_values, dtype=float)
    return vals.min(axis=0) if vals.ndim > 1 else vals


def shifted_ideal(y_id, tilde_d) -> np.ndarray:
    y_id = np.asarray(y_id, dtype=float)
    tilde_d = np.broadcast_to(np.asarray(tilde_d, dtype=float), y_id.shape)
    if np.any(tilde_d <= 0.0):
        raise ValueError("shift vector must be strictly positive")
    return y_id - tilde_d


def t_D(y, tilde_y, r) -> float:
    """Offset along r from the shifted-ideal faces: min_i (y_i - ty_i)/r_i."""
    y, tilde_y, r = (np.asarray(v, dtype=float) for v in (y, tilde_y, r))
    return float(np.min((y - tilde_y) / r))


def project_to_D(y, tilde_y, r) -> tuple[np.ndarray, float]:
    """Project y along -r onto the shifted-ideal face set D; returns (z, t)."""
    t = t_D(y, tilde_y, r)
    if t < -1e-9:
        raise ValueError("objective point lies below the shifted ideal point; "
                         "the ideal point is stale")
    return np.asarray(y, dtype=float) - t * np.asarray(r, dtype=float), t


@dataclass
class UTZRecord:
    """Solved Pascoletti-Serafini subproblem: parameter, offset, reference
    point (over index set I) and the full objective vector."""

    u: np.ndarray
    t: float
    z: np.ndarray  # over I
    I: tuple
    J_full: np.ndarray  # all k objectives at u


def build_grid(I, h, tilde_y, r, nadir, t_bar=None) -> list[tuple[int, np.ndarray]]:
    """Reference-point lattice on the faces D_i^I.

    For face i, the free coordinates j run over tilde_y_j + h/2 + k*h up
    to nadir_j - t_bar_i * r_j (closed bound).  ``tilde_y``, ``r`` and
    ``nadir`` are indexed by the global objective index; I is the sorted
    index set.  Returns (face_index, z) pairs with z over I.
    """
    if h <= 0.0:
        raise ValueError("grid size must be positive")
    I = tuple(sorted(I))
    tilde_y = np.asarray(tilde_y, dtype=float)
    r = np.asarray(r, dtype=float)
    nadir = dict(nadir)
    if t_bar is None:
        t_bar = {i: 0.0 for i in I}
    out = []
    for i in I:
        axes = []
        empty = False
        for j in I:
            if j == i:
                axes.append(np.array([tilde_y[j]]))
                continue
            upper = nadir[j] - t_bar[i] * r[j]
            start = tilde_y[j] + 0.5 * h
            count = int(np.floor((upper - start) / h + 1e-12)) + 1
            if count <= 0:
                empty = True
                break
            axes.append(start + h * np.arange(count))
        if empty:
            continue
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([g.ravel() for g in grids])
        for z in pts:
            out.append((i, z))
    return out


def redundancy_filter(z, I, sub_records, r, tol=1e-9) -> bool:
    """True if z is made redundant by a solved subproblem of a proper
    subset K: z agrees with the record's reference point on K and lies
    above the record's shifted objective values elsewhere."""
    I = tuple(sorted(I))
    z = np.asarray(z, dtype=float)
    r = np.asarray(r, dtype=float)
    pos = {j: a for a, j in enumerate(I)}
    for rec in sub_records:
        K = rec.I
        if not (set(K) < set(I)):
            continue
        zK = np.array([z[pos[j]] for j in K])
        recK = dict(zip(K, np.atleast_1d(rec.z)))
        if not np.allclose(zK, [recK[j] for j in K], atol=tol, rtol=0.0):
            continue
        rest = [j for j in I if j not in K]
        ok = all(z[pos[j]] >= rec.J_full[j] - rec.t * r[j] - tol for j in rest)
        if ok:
            return True
    return False


def interval_removal(remaining, z, u_bar, t_bar, J_I, r_I, tol=1e-12):
    """Prune grid points inside [J^I(u) - t*r^I, z] after solving at z.

    ``remaining`` is a list of (face, z) pairs; returns (kept, pruned)
    with pruned entries recorded as reference points solved by (u, t).
    """
    z = np.asarray(z, dtype=float)
    lower = np.asarray(J_I, dtype=float) - t_bar * np.asarray(r_I, dtype=float)
    kept, pruned = [], []
    for face, zt in remaining:
        if np.all(zt >= lower - tol) and np.all(zt <= z + tol):
            pruned.append((face, zt))
        else:
            kept.append((face, zt))
    return kept, pruned


def coverage(front_reference, front_approx) -> float:
    """max over reference points of the min Euclidean distance to the
    approximation."""
    ref = np.asarray(front_reference, dtype=float)
    app = np.asarray(front_approx, dtype=float)
    if ref.size == 0 or app.size == 0:
        raise ValueError("coverage requires nonempty fronts")
    d = np.linalg.norm(ref[:, None, :] - app[None, :, :], axis=2)
    return float(d.min(axis=1).max())


@dataclass
class ArchiveRecord:
    u: np.ndarray
    J: np.ndarray  # full k-vector
    t: float
    z: np.ndarray | None
    I: tuple
    stats: dict = field(default_factory=dict)


@dataclass
class ParetoArchive:
    """Collection of solved subproblem records with non-dominance filtering."""

    records: list = field(default_factory=list)

    def add(self, record: ArchiveRecord) -> None:
        self.records.append(record)

    def objective_matrix(self) -> np.ndarray:
        return np.array([rec.J for rec in self.records])

    def filter_nondominated(self) -> "ParetoArchive":
        if not self.records:
            return ParetoArchive([])
        keep = non_dominance_filter(self.objective_matrix())
        return ParetoArchive([self.records[i] for i in keep])
