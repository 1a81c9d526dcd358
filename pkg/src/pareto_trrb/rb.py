"""Reduced-basis surrogate: Galerkin projection onto an adaptively grown
snapshot space, reduced cost/gradient/Hessian evaluations and the four
residual-based a-posteriori error estimators.

One common space holds both state and adjoint snapshots.  Residual dual
norms are evaluated from a precomputed Gram matrix of Riesz
representatives, so every estimator costs O((Q*l)^2) independent of the
FE dimension.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .fem import CostSpec, FullOrderModel

__all__ = ["RBSpace", "ErrorEstimates"]

# relative V-norm tolerance below which an orthogonalized snapshot is dropped
GS_DROP_TOL = 1e-10


@dataclass
class ErrorEstimates:
    """A-posteriori bounds: state, adjoints, costs and cost gradients."""

    delta_st: float
    delta_adj: np.ndarray  # (k,)
    delta_J: np.ndarray  # (k,)
    delta_gradJ: np.ndarray  # (k,)


class RBSpace:
    """V-orthonormal reduced basis with preassembled reduced operators.

    The Riesz data covers, per basis function, one representative for
    each affine operator component (diffusion blocks, reaction mass,
    Robin mass) plus one for the H-inner-product term of the adjoint
    right-hand side; fixed terms cover the load vector and the desired
    states.
    """

    _next_id = 0

    def __init__(self, fom: FullOrderModel, cost: CostSpec):
        self.fom = fom
        self.cost = cost
        m = fom.m
        self.n_ops = m + 2  # A_diff[0..m-1], M_react, B_robin
        self.block = self.n_ops + 1  # + M_H psi_n
        k = cost.k

        N = fom.dim
        self.basis = np.zeros((N, 0))
        self.provenance: list[tuple] = []
        self.id = RBSpace._next_id
        RBSpace._next_id += 1

        # reduced operator components, each (l, l)
        self.red_ops = [np.zeros((0, 0)) for _ in range(self.n_ops)]
        self.red_MH = np.zeros((0, 0))
        self.red_F = np.zeros(0)
        self.red_yOm = [np.zeros(0) for _ in range(k)]  # basis' M_H y_Omega
        self.yOm_norm2 = np.zeros(k)  # y_Omega' M_H y_Omega
        for i in range(k):
            if cost.y_Omega[i] is not None:
                self.yOm_norm2[i] = cost.y_Omega[i] @ (fom.c.M_H @ cost.y_Omega[i])

        # Riesz representatives: fixed terms first (F, then M_H y_Omega per
        # objective), then one block of (n_ops + 1) terms per basis function.
        self.n_fixed = 1 + k
        R = np.zeros((N, self.n_fixed))
        R[:, 0] = fom.gv_solve(fom.c.F)
        for i in range(k):
            if cost.y_Omega[i] is not None:
                R[:, 1 + i] = fom.gv_solve(fom.c.M_H @ cost.y_Omega[i])
        self.riesz = R
        self.riesz_gram = R.T @ (fom.c.G_V @ R)

    # -- bookkeeping -----------------------------------------------------

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def theta(self, u: np.ndarray) -> np.ndarray:
        """Affine coefficients for the operator components at u."""
        m = self.fom.m
        return np.concatenate([u[: m + 1], [1.0]])

    def reduced_operator(self, u: np.ndarray) -> np.ndarray:
        th = self.theta(u)
        A = np.zeros((self.dim, self.dim))
        for q in range(self.n_ops):
            A += th[q] * self.red_ops[q]
        return A

    # -- construction ----------------------------------------------------

    @classmethod
    def init_space(cls, fom: FullOrderModel, cost: CostSpec,
                   u0: np.ndarray) -> "RBSpace":
        rb = cls(fom, cost)
        rb.enrich(u0)
        return rb

    def enrich(self, u: np.ndarray) -> list[np.ndarray]:
        """Add the state and adjoint snapshots at u; returns the raw
        snapshots (used for removal ranking)."""
        u = self.fom.check_u(u)
        y = self.fom.solve_state(u)
        snaps = [y]
        for i in range(self.cost.k):
            if self.cost.sigma_Omega[i] != 0.0:
                snaps.append(self.fom.solve_adjoint(self.cost, u, y, i))
        for v in snaps:
            self._gs_insert(v)
        self.provenance.append(tuple(np.asarray(u, dtype=float)))
        return snaps

    def _gs_insert(self, v: np.ndarray) -> bool:
        """Gram-Schmidt against the current basis; drop near-dependent."""
        G_V = self.fom.c.G_V
        norm0 = self.fom.norm_V(v)
        if norm0 <= 0.0:
            return False
        w = v.copy()
        for _ in range(2):  # twice is enough
            if self.dim:
                coef = self.basis.T @ (G_V @ w)
                w = w - self.basis @ coef
        norm = self.fom.norm_V(w)
        if norm < GS_DROP_TOL * norm0:
            return False
        psi = w / norm
        self._append_basis_vector(psi)
        return True

    def _append_basis_vector(self, psi: np.ndarray) -> None:
        fom, c = self.fom, self.fom.c
        comps = [*c.A_diff, c.M_react, c.B_robin]
        l = self.dim

        # extend reduced operators
        for q, comp in enumerate(comps):
            col = self.basis.T @ (comp @ psi) if l else np.zeros(0)
            diag = psi @ (comp @ psi)
            new = np.empty((l + 1, l + 1))
            new[:l, :l] = self.red_ops[q]
            new[:l, l] = col
            new[l, :l] = col
            new[l, l] = diag
            self.red_ops[q] = new
        colM = self.basis.T @ (c.M_H @ psi) if l else np.zeros(0)
        newM = np.empty((l + 1, l + 1))
        newM[:l, :l] = self.red_MH
        newM[:l, l] = colM
        newM[l, :l] = colM
        newM[l, l] = psi @ (c.M_H @ psi)
        self.red_MH = newM
        self.red_F = np.append(self.red_F, c.F @ psi)
        for i in range(self.cost.k):
            val = 0.0
            if self.cost.y_Omega[i] is not None:
                val = psi @ (c.M_H @ self.cost.y_Omega[i])
            self.red_yOm[i] = np.append(self.red_yOm[i], val)

        # extend Riesz data: one block per basis function
        new_r = np.empty((fom.dim, self.block))
        for q, comp in enumerate(comps):
            new_r[:, q] = fom.gv_solve(comp @ psi)
        new_r[:, self.n_ops] = fom.gv_solve(c.M_H @ psi)
        cross = self.riesz.T @ (c.G_V @ new_r)
        inner = new_r.T @ (c.G_V @ new_r)
        n_old = self.riesz.shape[1]
        G = np.empty((n_old + self.block, n_old + self.block))
        G[:n_old, :n_old] = self.riesz_gram
        G[:n_old, n_old:] = cross
        G[n_old:, :n_old] = cross.T
        G[n_old:, n_old:] = inner
        self.riesz_gram = G
        self.riesz = np.hstack([self.riesz, new_r])
        self.basis = np.hstack([self.basis, psi[:, None]])

    def remove_basis(self, n: int) -> None:
        """Delete basis function n (0-based) and its reduced data."""
        if not (0 <= n < self.dim):
            raise IndexError(f"basis index {n} out of range (dim={self.dim})")
        keep = [j for j in range(self.dim) if j != n]
        self.basis = self.basis[:, keep]
        self.red_ops = [op[np.ix_(keep, keep)] for op in self.red_ops]
        self.red_MH = self.red_MH[np.ix_(keep, keep)]
        self.red_F = self.red_F[keep]
        self.red_yOm = [v[keep] for v in self.red_yOm]
        start = self.n_fixed + n * self.block
        cols = [j for j in range(self.riesz.shape[1])
                if not (start <= j < start + self.block)]
        self.riesz = self.riesz[:, cols]
        self.riesz_gram = self.riesz_gram[np.ix_(cols, cols)]

    def copy(self) -> "RBSpace":
        other = RBSpace.__new__(RBSpace)
        other.__dict__.update(self.__dict__)
        for attr in ("basis", "red_MH", "red_F", "yOm_norm2", "riesz",
                     "riesz_gram"):
            setattr(other, attr, getattr(self, attr).copy())
        other.red_ops = [op.copy() for op in self.red_ops]
        other.red_yOm = [v.copy() for v in self.red_yOm]
        other.provenance = list(self.provenance)
        return other

    # -- reduced solves and cost derivatives -----------------------------

    def rb_solve_state(self, u: np.ndarray) -> np.ndarray:
        if self.dim == 0:
            return np.zeros(0)
        return np.linalg.solve(self.reduced_operator(u), self.red_F)

    def rb_solve_adjoint(self, u: np.ndarray, i: int,
                         a: np.ndarray | None = None) -> np.ndarray:
        if self.dim == 0:
            return np.zeros(0)
        if self.cost.sigma_Omega[i] == 0.0:
            return np.zeros(self.dim)
        if a is None:
            a = self.rb_solve_state(u)
        rhs = self.cost.sigma_Omega[i] * (self.red_MH @ a - self.red_yOm[i])
        return np.linalg.solve(self.reduced_operator(u), rhs)

    def lift(self, coef: np.ndarray) -> np.ndarray:
        return self.basis @ coef

    def _tracking_error2(self, a: np.ndarray, i: int) -> float:
        """||S_l(u) - y_Omega_i||_H^2 from reduced quantities."""
        return float(a @ (self.red_MH @ a) - 2.0 * a @ self.red_yOm[i]
                     + self.yOm_norm2[i])

    def rb_cost(self, u: np.ndarray, i: int,
                a: np.ndarray | None = None) -> float:
        u = self.fom.check_u(u)
        val = 0.5 * self.cost.sigma_U[i] * float(np.sum((u - self.cost.u_d[i]) ** 2))
        if self.cost.sigma_Omega[i] != 0.0:
            if a is None:
                a = self.rb_solve_state(u)
            val += 0.5 * self.cost.sigma_Omega[i] * max(self._tracking_error2(a, i), 0.0)
        return val

    def _red_partial_u_a(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        m = self.fom.m
        out = np.empty(m + 1)
        for j in range(m):
            out[j] = a @ (self.red_ops[j] @ b)
        out[m] = a @ (self.red_ops[m] @ b)
        return out

    def rb_gradient(self, u: np.ndarray, i: int, a: np.ndarray | None = None,
                    b: np.ndarray | None = None) -> np.ndarray:
        u = self.fom.check_u(u)
        g = self.cost.sigma_U[i] * (u - self.cost.u_d[i])
        if self.cost.sigma_Omega[i] != 0.0:
            if a is None:
                a = self.rb_solve_state(u)
            if b is None:
                b = self.rb_solve_adjoint(u, i, a)
            g = g - self._red_partial_u_a(a, b)
        return g

    def _apply_red_direction(self, h: np.ndarray, v: np.ndarray) -> np.ndarray:
        m = self.fom.m
        out = h[m] * (self.red_ops[m] @ v)
        for j in range(m):
            if h[j] != 0.0:
                out += h[j] * (self.red_ops[j] @ v)
        return out

    def rb_hessian_vec(self, u: np.ndarray, i: int, h: np.ndarray,
                       a: np.ndarray | None = None,
                       b: np.ndarray | None = None) -> np.ndarray:
        u = self.fom.check_u(u)
        out = self.cost.sigma_U[i] * np.asarray(h, dtype=float)
        if self.cost.sigma_Omega[i] != 0.0:
            A = self.reduced_operator(u)
            if a is None:
                a = np.linalg.solve(A, self.red_F)
            if b is None:
                b = np.linalg.solve(A, self.cost.sigma_Omega[i]
                                    * (self.red_MH @ a - self.red_yOm[i]))
            ah = np.linalg.solve(A, -self._apply_red_direction(h, a))
            rhs = -self._apply_red_direction(h, b) \
                + self.cost.sigma_Omega[i] * (self.red_MH @ ah)
            bh = np.linalg.solve(A, rhs)
            out = out - self._red_partial_u_a(ah, b) - self._red_partial_u_a(a, bh)
        return out

    # -- residual dual norms and error estimators ------------------------

    def _dual_norm(self, coef: np.ndarray) -> float:
        return float(np.sqrt(max(coef @ (self.riesz_gram @ coef), 0.0)))

    def _state_res_coef(self, u: np.ndarray, a: np.ndarray) -> np.ndarray:
        coef = np.zeros(self.riesz_gram.shape[0])
        coef[0] = 1.0
        th = self.theta(u)
        for n in range(self.dim):
            s = self.n_fixed + n * self.block
            coef[s: s + self.n_ops] -= a[n] * th
        return coef

    def _adjoint_res_coef(self, u: np.ndarray, i: int, a: np.ndarray,
                          b: np.ndarray) -> np.ndarray:
        coef = np.zeros(self.riesz_gram.shape[0])
        sOm = self.cost.sigma_Omega[i]
        coef[1 + i] = -sOm
        th = self.theta(u)
        for n in range(self.dim):
            s = self.n_fixed + n * self.block
            coef[s: s + self.n_ops] -= b[n] * th
            coef[s + self.n_ops] += sOm * a[n]
        return coef

    def state_residual_dual_norm(self, u: np.ndarray,
                                 a: np.ndarray | None = None) -> float:
        if a is None:
            a = self.rb_solve_state(u)
        return self._dual_norm(self._state_res_coef(u, a))

    def adjoint_residual_dual_norm(self, u: np.ndarray, i: int,
                                   a: np.ndarray | None = None,
                                   b: np.ndarray | None = None) -> float:
        if a is None:
            a = self.rb_solve_state(u)
        if b is None:
            b = self.rb_solve_adjoint(u, i, a)
        return self._dual_norm(self._adjoint_res_coef(u, i, a, b))

    def estimate_errors(self, u: np.ndarray) -> ErrorEstimates:
        u = self.fom.check_u(u)
        k = self.cost.k
        alpha = self.fom.coercivity_constant(u)
        a = self.rb_solve_state(u)
        d_st = self.state_residual_dual_norm(u, a) / alpha
        d_adj = np.zeros(k)
        d_J = np.zeros(k)
        d_gJ = np.zeros(k)
        c_du = self.fom.dual_norm_const()
        norm_a = float(np.linalg.norm(a))  # = ||S_l(u)||_V, basis orthonormal
        for i in range(k):
            if self.cost.sigma_Omega[i] == 0.0:
                continue
            b = self.rb_solve_adjoint(u, i, a)
            res_adj = self.adjoint_residual_dual_norm(u, i, a, b)
            sOm = self.cost.sigma_Omega[i]
            d_adj[i] = (res_adj + sOm * d_st) / alpha
            d_J[i] = d_st * res_adj + sOm * d_st ** 2
            norm_b = float(np.linalg.norm(b))
            d_gJ[i] = c_du * (norm_a * d_adj[i] + d_st * d_adj[i] + d_st * norm_b)
        return ErrorEstimates(d_st, d_adj, d_J, d_gJ)

    # -- Fourier coefficients --------------------------------------------

    def fourier_coefficients(self, v: np.ndarray) -> np.ndarray:
        return self.basis.T @ (self.fom.c.G_V @ v)

    # -- checkpointing ---------------------------------------------------

    def save(self, path) -> None:
        doc = {"basis": self.basis.tolist(),
               "provenance": [list(p) for p in self.provenance]}
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, path, fom: FullOrderModel, cost: CostSpec) -> "RBSpace":
        with open(path) as fh:
            doc = json.load(fh)
        rb = cls(fom, cost)
        for col in np.asarray(doc["basis"], dtype=float).T:
            rb._append_basis_vector(col)
        rb.provenance = [tuple(p) for p in doc["provenance"]]
        return rb
