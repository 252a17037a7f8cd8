"""The relaxed optimal control problem as a finite-dimensional NLP.

Unknowns are stacked as z = (y, v, xi), each block one value per interior
node.  The problem is

    min  1/2 |y - z_d|^2 + nu/2 |v - v_d|^2
    s.t. A y + g(y) = f + v + xi
         theta(y - psi) + theta(xi) <= 1     (per node, scaled form)
         y >= psi, xi >= 0, optionally |xi| <= R

where |.| is the discrete L2 norm of the chosen weighting.  Multipliers
handled here (q for the state equation, r for the relaxed constraint) are
densities, i.e. independent of the weighting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import smoothing as sm
from .grid import Grid, ProblemData, assemble_laplacian, check_field


@dataclass
class KktReport:
    stationarity_y: float
    stationarity_v: float
    stationarity_xi: float
    r_complementarity: float
    q: np.ndarray
    r: np.ndarray
    p: np.ndarray
    omega: np.ndarray

    @property
    def max_residual(self) -> float:
        return max(self.stationarity_y, self.stationarity_v, self.stationarity_xi,
                   self.r_complementarity)

    def summary(self) -> dict:
        return {
            "stationarity_y": self.stationarity_y,
            "stationarity_v": self.stationarity_v,
            "stationarity_xi": self.stationarity_xi,
            "r_complementarity": self.r_complementarity,
            "r_max": float(np.max(self.r)) if np.size(self.r) else 0.0,
        }


@dataclass
class RelaxedOcp:
    grid: Grid
    data: ProblemData
    smoothing: sm.SmoothingFn
    weighting: str = "node-sum"
    xi_bound: float = np.inf
    A: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        self.A = assemble_laplacian(self.grid)
        for name in ("f", "psi", "z_d", "v_d"):
            check_field(self.grid, getattr(self.data, name), name)
        self.grid.weight(self.weighting)
        if not self.xi_bound > 0:
            raise ValueError("xi_bound must be positive (use inf to disable)")

    # -- layout ---------------------------------------------------------
    @property
    def m(self) -> int:
        return self.grid.interior_count

    @property
    def w(self) -> float:
        """Quadrature weight of one node."""
        return self.grid.weight(self.weighting)

    def split(self, z):
        z = np.asarray(z, dtype=float)
        m = self.m
        if z.shape != (3 * m,):
            raise ValueError(f"z must have length {3 * m}, got {z.shape}")
        return z[:m], z[m:2 * m], z[2 * m:]

    def pack(self, y, v, xi) -> np.ndarray:
        return np.concatenate([y, v, xi]).astype(float)

    # -- objective ------------------------------------------------------
    def objective(self, z) -> float:
        y, v, _ = self.split(z)
        d = self.data
        ey, ev = y - d.z_d, v - d.v_d
        return 0.5 * self.w * float(ey @ ey) + 0.5 * d.nu * self.w * float(ev @ ev)

    def objective_grad(self, z) -> np.ndarray:
        y, v, _ = self.split(z)
        d = self.data
        return self.w * self.pack(y - d.z_d, d.nu * (v - d.v_d), np.zeros(self.m))

    def objective_hess_diag(self) -> np.ndarray:
        m = self.m
        return self.w * np.concatenate([np.ones(m), np.full(m, self.data.nu), np.zeros(m)])

    # -- state equation -------------------------------------------------
    def state_residual(self, z) -> np.ndarray:
        y, v, xi = self.split(z)
        d = self.data
        return self.A @ y + d.g.g(y) - d.f - v - xi

    def state_operator(self, y) -> sp.csr_matrix:
        """A + diag(g'(y))."""
        return (self.A + sp.diags(self.data.g.dg(y))).tocsr()

    def state_jacobian(self, z) -> sp.csr_matrix:
        y, _, _ = self.split(z)
        eye = sp.identity(self.m, format="csr")
        return sp.hstack([self.state_operator(y), -eye, -eye], format="csr")

    # -- relaxed complementarity ----------------------------------------
    def gaps(self, z, tol: float = 0.0):
        """(y - psi, xi), rejecting bound violations beyond ``tol``."""
        y, _, xi = self.split(z)
        a = y - self.data.psi
        if np.any(a < -tol) or np.any(xi < -tol):
            raise sm.DomainError("bounds y >= psi, xi >= 0 violated")
        return np.maximum(a, 0.0), np.maximum(xi, 0.0)

    def complementarity_constraints(self, z, tol: float = 0.0) -> np.ndarray:
        a, b = self.gaps(z, tol)
        return np.asarray(sm.scaled_residual(self.smoothing, a, b), dtype=float).reshape(-1)

    def complementarity_derivs(self, z, tol: float = 0.0):
        """Per-node scaled constraint value, gradient and Hessian in (y_i, xi_i)."""
        a, b = self.gaps(z, tol)
        return sm.scaled_residual_derivs(self.smoothing, a, b)

    def complementarity_jacobian(self, z, tol: float = 0.0) -> sp.csr_matrix:
        _, c_a, c_b, *_ = self.complementarity_derivs(z, tol)
        m = self.m
        return sp.hstack([sp.diags(c_a), sp.csr_matrix((m, m)), sp.diags(c_b)], format="csr")

    def comp_error(self, z) -> float:
        """<y - psi, xi> / N^2 as a plain node sum, as tabulated."""
        y, _, xi = self.split(z)
        return float(np.dot(y - self.data.psi, xi)) / self.grid.n**2

    # -- adjoint --------------------------------------------------------
    def adjoint_solve(self, y) -> np.ndarray:
        """Solve (A + diag(g'(y)))^T p = y - z_d."""
        y = check_field(self.grid, y, "y")
        op = self.state_operator(y).T.tocsc()
        p = spla.spsolve(op, y - self.data.z_d)
        if not np.all(np.isfinite(p)):
            raise np.linalg.LinAlgError("adjoint solve failed")
        return p

    def reduced_gradient(self, v, xi, y0=None, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of v -> J(y(v, xi), v) with the state solved exactly.

        Returns (gradient, y).  Uses the adjoint: grad = w (nu (v - v_d) + p).
        """
        y = solve_state(self, v, xi, y0=y0, tol=tol)
        p = self.adjoint_solve(y)
        return self.w * (self.data.nu * (v - self.data.v_d) + p), y

    def reduced_objective(self, v, xi, y0=None, tol: float = 1e-12) -> float:
        y = solve_state(self, v, xi, y0=y0, tol=tol)
        return self.objective(self.pack(y, v, xi))

    # -- penalized functional -------------------------------------------
    def penalized_objective(self, z, eps: float, anchor) -> float:
        """J + 1/(2 eps)|c|^2 + 1/2 |A(y - y_a)|^2 + 1/2 |v - v_a|^2 + 1/2 |xi - xi_a|^2."""
        if not eps > 0:
            raise ValueError("eps must be positive")
        y, v, xi = self.split(z)
        ya, va, xia = self.split(anchor)
        c = self.state_residual(z)
        ay = self.A @ (y - ya)
        w = self.w
        return (self.objective(z) + w / (2 * eps) * float(c @ c)
                + 0.5 * w * (float(ay @ ay) + float((v - va) @ (v - va)) + float((xi - xia) @ (xi - xia))))

    def penalty_multiplier(self, z, eps: float) -> np.ndarray:
        """q_eps = (A y + g(y) - f - v - xi) / eps."""
        return self.state_residual(z) / eps

    def penalized_grad(self, z, eps: float, anchor) -> np.ndarray:
        y, v, xi = self.split(z)
        ya, va, xia = self.split(anchor)
        q = self.penalty_multiplier(z, eps)
        w = self.w
        g = self.objective_grad(z)
        g += w * (self.state_jacobian(z).T @ q)
        g += w * self.pack(self.A.T @ (self.A @ (y - ya)), v - va, xi - xia)
        return g

    def penalized_hessian(self, z, eps: float) -> sp.csr_matrix:
        """Hessian of the penalized functional (exact, including g'' terms)."""
        y, _, _ = self.split(z)
        w = self.w
        jac = self.state_jacobian(z)
        c = self.state_residual(z)
        m = self.m
        h = (jac.T @ jac) / eps
        curv = sp.diags(np.concatenate([self.data.g.d2g(y) * c / eps, np.zeros(2 * m)]))
        prox = sp.block_diag([self.A.T @ self.A, sp.identity(m), sp.identity(m)])
        return (w * (h + curv + prox) + sp.diags(self.objective_hess_diag())).tocsr()

    # -- optimality -----------------------------------------------------
    def omega(self, y) -> np.ndarray:
        """g'(y) y - g(y)."""
        g = self.data.g
        return g.dg(y) * y - g.g(y)

    def kkt_residuals(self, z, q, r, p=None) -> KktReport:
        """Residuals of the first-order system for the relaxed problem.

        ``q`` is the state-equation multiplier and ``r`` the multiplier of the
        relaxed constraint, either one scalar or one value per node.  Cone
        constraints are measured by natural (projection) residuals in the
        max norm.
        """
        r_arr = np.broadcast_to(np.asarray(r, dtype=float), (self.m,)).copy()
        if np.any(r_arr < 0):
            raise ValueError("multiplier r must be nonnegative")
        q = check_field(self.grid, q, "q")
        y, v, xi = self.split(z)
        d = self.data
        fn = self.smoothing
        a, b = self.gaps(z, tol=np.inf)
        if p is None:
            p = self.adjoint_solve(y)

        gy = self.state_operator(y).T @ (p + q) + r_arr * sm.theta_deriv(fn, a)
        st_y = _natural_residual(y - d.psi, gy)

        st_v = float(np.max(np.abs(d.nu * (v - d.v_d) - q), initial=0.0))

        gxi = r_arr * sm.theta_deriv(fn, b) - q
        if np.isfinite(self.xi_bound):
            proj = _project_ball_orthant(xi - gxi, self.xi_bound, self.w)
            st_xi = float(np.max(np.abs(xi - proj), initial=0.0))
        else:
            st_xi = _natural_residual(xi, gxi)

        # multiplier times the (nonpositive) slack of theta(a) + theta(b) <= 1
        slack = sm.theta(fn, a) + sm.theta(fn, b) - 1.0
        r_comp = abs(float(np.sum(r_arr * slack)))
        return KktReport(st_y, st_v, st_xi, r_comp, q=q, r=r_arr, p=p, omega=self.omega(y))


def _natural_residual(gap, grad) -> float:
    """max |min(gap, grad)|: zero iff gap >= 0, grad >= 0, gap * grad = 0."""
    return float(np.max(np.abs(np.minimum(gap, grad)), initial=0.0))


def _project_ball_orthant(x, radius, w):
    """Projection onto {x >= 0, sqrt(w) |x| <= radius}."""
    xp = np.maximum(x, 0.0)
    nrm = np.sqrt(w) * np.linalg.norm(xp)
    return xp if nrm <= radius else xp * (radius / nrm)


def solve_state(ocp: RelaxedOcp, v, xi, y0=None, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """Newton solve of A y + g(y) = f + v + xi for y."""
    d = ocp.data
    rhs = d.f + v + xi
    y = np.zeros(ocp.m) if y0 is None else np.array(y0, dtype=float)
    res = ocp.A @ y + d.g.g(y) - rhs
    scale = max(1.0, float(np.max(np.abs(rhs), initial=0.0)))
    for _ in range(max_iter):
        nrm = float(np.max(np.abs(res)))
        if nrm <= tol * scale:
            return y
        step = spla.spsolve(ocp.state_operator(y).tocsc(), -res)
        t = 1.0
        while True:
            y_new = y + t * step
            res_new = ocp.A @ y_new + d.g.g(y_new) - rhs
            if np.max(np.abs(res_new)) < (1 - 1e-4 * t) * nrm or t < 1e-10:
                break
            t *= 0.5
        y, res = y_new, res_new
    raise RuntimeError(f"state solve did not converge (residual {np.max(np.abs(res)):.3e})")
