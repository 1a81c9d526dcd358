"""Full-order P1 finite-element model of the parametric elliptic
diffusion-reaction equation with Robin boundary, together with adjoint
solves and exact cost/gradient/Hessian-vector evaluations.

The bilinear form is parameter separable:

    A(u) = sum_i kappa_i * A_diff[i] + u_r * M_react + B_robin

with one stiffness block per subdomain, a reaction mass matrix and a
Robin boundary mass matrix.  All solves reuse a cached sparse
factorization of A(u).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "Mesh",
    "FomComponents",
    "CostSpec",
    "FullOrderModel",
    "build_unit_square_mesh",
    "assemble_components",
]


class MeshError(ValueError):
    pass


@dataclass
class Mesh:
    """Triangulation of the unit square with subdomain labels.

    nodes: (N, 2) coordinates; triangles: (T, 3) vertex indices with
    positive orientation; boundary_edges: (E, 2) node pairs on the outer
    boundary; subdomain_of_triangle: (T,) labels in 1..m.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    subdomain_of_triangle: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_subdomains(self) -> int:
        return int(self.subdomain_of_triangle.max())

    def triangle_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def validate(self) -> None:
        areas = self.triangle_areas()
        if not np.all(areas > 0.0):
            raise MeshError("mesh contains a triangle with non-positive area")
        labels = np.unique(self.subdomain_of_triangle)
        if labels.min() < 1 or len(labels) != labels.max():
            raise MeshError("subdomain labels must cover 1..m")

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "triangles": self.triangles.tolist(),
            "boundary_edges": self.boundary_edges.tolist(),
            "subdomain_of_triangle": self.subdomain_of_triangle.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mesh":
        return cls(
            nodes=np.asarray(d["nodes"], dtype=float),
            triangles=np.asarray(d["triangles"], dtype=int),
            boundary_edges=np.asarray(d["boundary_edges"], dtype=int),
            subdomain_of_triangle=np.asarray(d["subdomain_of_triangle"], dtype=int),
        )


def build_unit_square_mesh(n_per_side: int, split_points=(0.5,)) -> Mesh:
    """Structured triangulation of the unit square with (n+1)^2 nodes.

    Each grid cell is split along its lower-left/upper-right diagonal.
    ``split_points`` are the interface coordinates of the subdomain
    decomposition, applied to both axes; they must lie on grid lines.
    Subdomains are numbered column-major: for a single split at 0.5 the
    quadrants are 1=(0,.5)x(0,.5), 2=(0,.5)x(.5,1), 3=(.5,1)x(0,.5),
    4=(.5,1)x(.5,1).
    """
    if n_per_side < 2:
        raise MeshError("n_per_side must be >= 2")
    splits = sorted(float(s) for s in split_points)
    h = 1.0 / n_per_side
    for s in splits:
        if not (0.0 < s < 1.0):
            raise MeshError(f"split point {s} outside (0, 1)")
        if abs(s / h - round(s / h)) > 1e-9:
            raise MeshError(
                f"split point {s} is not representable on a grid with "
                f"n_per_side={n_per_side}"
            )

    n = n_per_side
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def idx(ix, iy):
        return iy * (n + 1) + ix

    tris = []
    for iy in range(n):
        for ix in range(n):
            n00 = idx(ix, iy)
            n10 = idx(ix + 1, iy)
            n01 = idx(ix, iy + 1)
            n11 = idx(ix + 1, iy + 1)
            tris.append((n00, n10, n11))
            tris.append((n00, n11, n01))
    triangles = np.asarray(tris, dtype=int)

    edges = []
    for i in range(n):
        edges.append((idx(i, 0), idx(i + 1, 0)))
        edges.append((idx(i, n), idx(i + 1, n)))
        edges.append((idx(0, i), idx(0, i + 1)))
        edges.append((idx(n, i), idx(n, i + 1)))
    boundary_edges = np.asarray(edges, dtype=int)

    bounds = [0.0] + splits + [1.0]
    n_blocks = len(bounds) - 1

    def block_of(c):
        for b in range(n_blocks):
            if c < bounds[b + 1] + 1e-12:
                return b
        return n_blocks - 1

    centroids = nodes[triangles].mean(axis=1)
    labels = np.empty(len(triangles), dtype=int)
    for t, (cx, cy) in enumerate(centroids):
        labels[t] = block_of(cx) * n_blocks + block_of(cy) + 1

    mesh = Mesh(nodes, triangles, boundary_edges, labels)
    mesh.validate()
    return mesh


@dataclass
class FomComponents:
    """Parameter-separable component matrices and load vector."""

    A_diff: list  # one CSR stiffness block per subdomain
    M_react: sp.csr_matrix
    B_robin: sp.csr_matrix
    F: np.ndarray
    M_H: sp.csr_matrix  # L2 Gram matrix
    G_V: sp.csr_matrix  # H1 Gram matrix (stiffness + mass)

    @property
    def m(self) -> int:
        return len(self.A_diff)

    def assemble(self, u: np.ndarray) -> sp.csr_matrix:
        """A(u) = sum_i kappa_i A_diff[i] + u_r M_react + B_robin."""
        u = np.asarray(u, dtype=float)
        A = self.B_robin.copy()
        for i in range(self.m):
            A = A + u[i] * self.A_diff[i]
        A = A + u[self.m] * self.M_react
        return A.tocsr()

    def to_dict(self) -> dict:
        def csr(mat):
            coo = mat.tocoo()
            return {
                "shape": list(coo.shape),
                "row": coo.row.tolist(),
                "col": coo.col.tolist(),
                "data": coo.data.tolist(),
            }

        return {
            "A_diff": [csr(a) for a in self.A_diff],
            "M_react": csr(self.M_react),
            "B_robin": csr(self.B_robin),
            "F": self.F.tolist(),
            "M_H": csr(self.M_H),
            "G_V": csr(self.G_V),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FomComponents":
        def mat(entry):
            return sp.coo_matrix(
                (entry["data"], (entry["row"], entry["col"])),
                shape=tuple(entry["shape"]),
            ).tocsr()

        return cls(
            A_diff=[mat(a) for a in d["A_diff"]],
            M_react=mat(d["M_react"]),
            B_robin=mat(d["B_robin"]),
            F=np.asarray(d["F"], dtype=float),
            M_H=mat(d["M_H"]),
            G_V=mat(d["G_V"]),
        )


def _as_nodal(values, nodes):
    """Evaluate a callable / broadcast a constant to nodal values."""
    if callable(values):
        return np.asarray([values(x) for x in nodes], dtype=float)
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        return np.full(len(nodes), float(arr))
    if arr.shape != (len(nodes),):
        raise ValueError("nodal data has wrong shape")
    return arr


def assemble_components(mesh: Mesh, reaction=1.0, source=1.0, ambient=0.0,
                        alpha: float = 0.0) -> FomComponents:
    """Assemble all parameter-separable matrices and the load vector.

    The reaction coefficient is interpolated nodally and integrated
    exactly against P1 products.  The source is taken element-wise
    constant (centroid value), so piecewise-constant sources aligned
    with the subdomains are integrated exactly.
    """
    mesh.validate()
    N = mesh.n_nodes
    m = mesh.n_subdomains
    nodes, tris = mesh.nodes, mesh.triangles
    nT = len(tris)

    r_nodal = _as_nodal(reaction, nodes)
    if np.any(r_nodal <= 0.0):
        raise ValueError("reaction coefficient must be positive")

    p = nodes[tris]  # (T, 3, 2)
    areas = mesh.triangle_areas()

    # P1 gradient coefficients: grad phi_i = (b_i, c_i) / (2A)
    x, y = p[:, :, 0], p[:, :, 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)

    # local stiffness (T, 3, 3)
    K_loc = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :])
    K_loc /= (4.0 * areas)[:, None, None]

    # local L2 mass
    M_base = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    M_loc = areas[:, None, None] * M_base[None, :, :]

    # local reaction mass with nodal r, exact for P1 * P1 * P1
    r_loc = r_nodal[tris]  # (T, 3)
    Mr_loc = np.empty((nT, 3, 3))
    # diag entry = A/60*(6 r_i + 2 r_j + 2 r_k), off-diag = A/60*(2 r_i + 2 r_j + r_k)
    for i in range(3):
        for j in range(3):
            k = 3 - i - j if i != j else None
            if i == j:
                others = [t for t in range(3) if t != i]
                Mr_loc[:, i, j] = 6.0 * r_loc[:, i] + 2.0 * r_loc[:, others[0]] \
                    + 2.0 * r_loc[:, others[1]]
            else:
                Mr_loc[:, i, j] = 2.0 * r_loc[:, i] + 2.0 * r_loc[:, j] + r_loc[:, k]
    Mr_loc *= (areas / 60.0)[:, None, None]

    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()

    def global_mat(loc, mask=None):
        if mask is None:
            data, r_, c_ = loc.ravel(), rows, cols
        else:
            data = loc[mask].ravel()
            r_ = np.repeat(tris[mask], 3, axis=1).ravel()
            c_ = np.tile(tris[mask], (1, 3)).ravel()
        return sp.coo_matrix((data, (r_, c_)), shape=(N, N)).tocsr()

    A_diff = [global_mat(K_loc, mesh.subdomain_of_triangle == s)
              for s in range(1, m + 1)]
    M_H = global_mat(M_loc)
    M_react = global_mat(Mr_loc)

    # load vector, element-wise constant source
    centroids = p.mean(axis=1)
    if callable(source):
        f_tri = np.asarray([source(x) for x in centroids], dtype=float)
    else:
        arr = np.asarray(source, dtype=float)
        f_tri = np.full(nT, float(arr)) if arr.ndim == 0 else \
            _as_nodal(source, nodes)[tris].mean(axis=1)
    F = np.zeros(N)
    np.add.at(F, tris.ravel(), np.repeat(f_tri * areas / 3.0, 3))

    # Robin boundary terms
    B_robin = sp.csr_matrix((N, N))
    if alpha > 0.0:
        e = mesh.boundary_edges
        pe = nodes[e]
        lens = np.linalg.norm(pe[:, 1] - pe[:, 0], axis=1)
        E_base = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
        data = (alpha * lens)[:, None, None] * E_base[None, :, :]
        er = np.repeat(e, 2, axis=1).ravel()
        ec = np.tile(e, (1, 2)).ravel()
        B_robin = sp.coo_matrix((data.ravel(), (er, ec)), shape=(N, N)).tocsr()

        ya_nodal = _as_nodal(ambient, nodes)
        ya_e = ya_nodal[e]
        contrib = np.empty_like(ya_e)
        contrib[:, 0] = alpha * lens / 6.0 * (2.0 * ya_e[:, 0] + ya_e[:, 1])
        contrib[:, 1] = alpha * lens / 6.0 * (ya_e[:, 0] + 2.0 * ya_e[:, 1])
        np.add.at(F, e.ravel(), contrib.ravel())

    G_V = (sum(A_diff) + M_H).tocsr()
    return FomComponents(A_diff, M_react, B_robin, F, M_H, G_V)


@dataclass
class CostSpec:
    """Quadratic tracking objectives and the admissible parameter box."""

    sigma_Omega: np.ndarray  # (k,)
    sigma_U: np.ndarray  # (k,)
    y_Omega: list  # nodal vectors in H, or None where sigma_Omega == 0
    u_d: np.ndarray  # (k, m+1)
    u_a: np.ndarray  # (m+1,)
    u_b: np.ndarray  # (m+1,)

    def __post_init__(self):
        self.sigma_Omega = np.asarray(self.sigma_Omega, dtype=float)
        self.sigma_U = np.asarray(self.sigma_U, dtype=float)
        self.u_d = np.asarray(self.u_d, dtype=float)
        self.u_a = np.asarray(self.u_a, dtype=float)
        self.u_b = np.asarray(self.u_b, dtype=float)
        if np.any(self.u_a > self.u_b):
            raise ValueError("box bounds must satisfy u_a <= u_b")
        if np.any(self.u_a <= 0.0):
            raise ValueError("admissible box must lie in the coercive range")

    @property
    def k(self) -> int:
        return len(self.sigma_Omega)

    def project(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.u_a, self.u_b)

    def in_box(self, u: np.ndarray, tol: float = 1e-12) -> bool:
        return bool(np.all(u >= self.u_a - tol) and np.all(u <= self.u_b + tol))


class FullOrderModel:
    """FE truth model: state/adjoint solves plus cost derivatives.

    Factorizations are cached per parameter; every triangular solve
    against A(u) increments ``n_solves`` for speedup accounting.
    """

    def __init__(self, mesh: Mesh, components: FomComponents):
        self.mesh = mesh
        self.c = components
        self.n_solves = 0
        self._factor_cache: dict = {}
        self._gv_factor = None
        self._dual_norm_const = None
        self._lock = threading.Lock()

    @property
    def m(self) -> int:
        return self.c.m

    @property
    def dim(self) -> int:
        return len(self.c.F)

    # -- basic parameter checks ------------------------------------------

    def check_u(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.m + 1,):
            raise ValueError(f"parameter must have {self.m + 1} entries")
        if np.any(u <= 0.0):
            raise ValueError("parameter outside the coercive range U_eq")
        return u

    def coercivity_constant(self, u: np.ndarray) -> float:
        u = self.check_u(u)
        return float(u.min())

    # -- linear solves ---------------------------------------------------

    def _factorization(self, u: np.ndarray):
        key = tuple(np.asarray(u, dtype=float))
        with self._lock:
            fac = self._factor_cache.get(key)
            if fac is None:
                A = self.c.assemble(u).tocsc()
                fac = spla.splu(A)
                if len(self._factor_cache) > 8:
                    self._factor_cache.clear()
                self._factor_cache[key] = fac
        return fac

    def _solve(self, u: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        with self._lock:
            self.n_solves += 1
        return self._factorization(u).solve(rhs)

    def solve_state(self, u: np.ndarray) -> np.ndarray:
        u = self.check_u(u)
        return self._solve(u, self.c.F)

    def solve_adjoint(self, cost: CostSpec, u: np.ndarray, y: np.ndarray,
                      i: int) -> np.ndarray:
        u = self.check_u(u)
        if cost.sigma_Omega[i] == 0.0:
            return np.zeros_like(y)
        rhs = cost.sigma_Omega[i] * (self.c.M_H @ (y - cost.y_Omega[i]))
        return self._solve(u, rhs)

    def state_sensitivity(self, u: np.ndarray, y: np.ndarray,
                          h: np.ndarray) -> np.ndarray:
        u = self.check_u(u)
        rhs = -self._apply_direction(h, y)
        return self._solve(u, rhs)

    def adjoint_sensitivity(self, cost: CostSpec, u: np.ndarray, y: np.ndarray,
                            p: np.ndarray, yh: np.ndarray, h: np.ndarray,
                            i: int) -> np.ndarray:
        """p^(i),h solving a(u; phi, p^h) = -da(u; phi, p) h + sOm <y^h, phi>_H."""
        u = self.check_u(u)
        rhs = -self._apply_direction(h, p)
        if cost.sigma_Omega[i] != 0.0:
            rhs = rhs + cost.sigma_Omega[i] * (self.c.M_H @ yh)
        return self._solve(u, rhs)

    def _apply_direction(self, h: np.ndarray, v: np.ndarray) -> np.ndarray:
        """(sum_j h_j A_diff[j] + h_r M_react) v."""
        out = h[self.m] * (self.c.M_react @ v)
        for j in range(self.m):
            if h[j] != 0.0:
                out += h[j] * (self.c.A_diff[j] @ v)
        return out

    # -- inner products and norms ----------------------------------------

    def norm_V(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.c.G_V @ v), 0.0)))

    def norm_H(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.c.M_H @ v), 0.0)))

    def gv_solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._gv_factor is None:
            self._gv_factor = spla.splu(self.c.G_V.tocsc())
        return self._gv_factor.solve(rhs)

    def dual_norm_V(self, rhs: np.ndarray) -> float:
        """Norm in V' of the functional with coefficient vector rhs."""
        w = self.gv_solve(rhs)
        return float(np.sqrt(max(rhs @ w, 0.0)))

    def dual_norm_const(self) -> float:
        """Bound on ||d_u a(u;.,.)||: max G_V-relative spectral norm of the
        diffusion/reaction components, computed once by power iteration."""
        if self._dual_norm_const is None:
            rng = np.random.default_rng(0)
            best = 0.0
            for comp in [*self.c.A_diff, self.c.M_react]:
                v = rng.standard_normal(self.dim)
                v /= self.norm_V(v)
                lam = 0.0
                for _ in range(50):
                    w = self.gv_solve(comp @ v)
                    lam = self.norm_V(w)
                    if lam < 1e-15:
                        break
                    v = w / lam
                best = max(best, lam)
            self._dual_norm_const = best
        return self._dual_norm_const

    # -- cost and derivatives --------------------------------------------

    def partial_u_a(self, y: np.ndarray, p: np.ndarray) -> np.ndarray:
        out = np.empty(self.m + 1)
        for j in range(self.m):
            out[j] = y @ (self.c.A_diff[j] @ p)
        out[self.m] = y @ (self.c.M_react @ p)
        return out

    def eval_cost(self, cost: CostSpec, u: np.ndarray, i: int,
                  y: np.ndarray | None = None) -> float:
        u = self.check_u(u)
        val = 0.5 * cost.sigma_U[i] * float(np.sum((u - cost.u_d[i]) ** 2))
        if cost.sigma_Omega[i] != 0.0:
            if y is None:
                y = self.solve_state(u)
            d = y - cost.y_Omega[i]
            val += 0.5 * cost.sigma_Omega[i] * float(d @ (self.c.M_H @ d))
        return val

    def eval_gradient(self, cost: CostSpec, u: np.ndarray, i: int,
                      y: np.ndarray | None = None,
                      p: np.ndarray | None = None) -> np.ndarray:
        u = self.check_u(u)
        g = cost.sigma_U[i] * (u - cost.u_d[i])
        if cost.sigma_Omega[i] != 0.0:
            if y is None:
                y = self.solve_state(u)
            if p is None:
                p = self.solve_adjoint(cost, u, y, i)
            g = g - self.partial_u_a(y, p)
        return g

    def eval_hessian_vec(self, cost: CostSpec, u: np.ndarray, i: int,
                         h: np.ndarray, y: np.ndarray | None = None,
                         p: np.ndarray | None = None) -> np.ndarray:
        u = self.check_u(u)
        out = cost.sigma_U[i] * np.asarray(h, dtype=float)
        if cost.sigma_Omega[i] != 0.0:
            if y is None:
                y = self.solve_state(u)
            if p is None:
                p = self.solve_adjoint(cost, u, y, i)
            yh = self.state_sensitivity(u, y, h)
            ph = self.adjoint_sensitivity(cost, u, y, p, yh, h, i)
            out = out - self.partial_u_a(yh, p) - self.partial_u_a(y, ph)
        return out

    # -- serialization ---------------------------------------------------

    def save(self, path) -> None:
        doc = {"mesh": self.mesh.to_dict(), "components": self.c.to_dict()}
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, path) -> "FullOrderModel":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(Mesh.from_dict(doc["mesh"]),
                   FomComponents.from_dict(doc["components"]))
