"""Interior-point and penalization solvers for the relaxed control problem.

Both paths share one primal-dual log-barrier Newton engine:

* ``solve_barrier`` treats the state equation as an equality constraint;
  v is eliminated from each Newton system, which leaves a banded reduced
  Hessian in (y, xi) that is factored by Cholesky;
* ``solve_penalty`` moves the state equation into the objective with weight
  1/(2 eps) plus proximal anchor terms, and drives eps down.

The relaxed complementarity constraints always use the logarithmically
scaled form with a slack; y >= psi and xi >= 0 are explicit bounds.  Steps
are globalized by a filter line search with second-order corrections.
Objective and multipliers are handled in density units (divided by the
node weight), so tolerances mean the same thing for both weightings.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from . import smoothing as sm
from .grid import Grid, ProblemData
from .model import KktReport, RelaxedOcp

log = logging.getLogger(__name__)

WARM_RETRY_SHRINK = (1.0, 1e-2, 1e-4)

STATUSES = ("converged", "max_iter", "line_search", "linear_solver", "eps_underflow")


@dataclass
class SolverConfig:
    tol: float = 1e-3
    max_iter: int = 500
    mu_init: float = 0.1
    mu_factor: float = 0.2
    mu_power: float = 1.5
    mu_min: float = 1e-12
    kappa_eps: float = 10.0
    warm_mu: float = 1e-4
    feas_tol: float = 1e-8
    tau_min: float = 0.99
    backtrack: float = 0.5
    armijo: float = 1e-4
    min_step: float = 1e-14
    eps_init: float = 1.0
    eps_factor: float = 0.1
    eps_min: float = 1e-12
    max_outer: int = 400
    prox_tol: float | None = None
    anderson: int = 5

    def __post_init__(self):
        for name in ("tol", "mu_init", "mu_min", "feas_tol", "eps_init", "eps_min",
                     "backtrack", "armijo", "kappa_eps", "warm_mu"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("mu_factor", "eps_factor", "backtrack"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.anderson < 0:
            raise ValueError("anderson depth must be nonnegative")
        if not 0 < self.tau_min < 1:
            raise ValueError("tau_min must lie in (0, 1)")
        if self.max_iter < 1 or self.max_outer < 1:
            raise ValueError("iteration limits must be positive")


@dataclass
class SolveReport:
    z: np.ndarray
    q: np.ndarray
    r: np.ndarray
    z_y: np.ndarray
    z_xi: np.ndarray
    objective: float
    state_residual_2: float
    comp_error: float
    iterations: int
    converged: bool
    status: str
    kkt: KktReport | None
    alpha: float
    wall_time_ms: float = 0.0
    history: list = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.z.size // 3

    @property
    def y(self) -> np.ndarray:
        return self.z[: self.m]

    @property
    def v(self) -> np.ndarray:
        return self.z[self.m: 2 * self.m]

    @property
    def xi(self) -> np.ndarray:
        return self.z[2 * self.m:]

    def metrics(self) -> dict:
        return {
            "alpha": self.alpha,
            "objective": self.objective,
            "state_residual_2": self.state_residual_2,
            "comp_error": self.comp_error,
            "iterations": self.iterations,
            "converged": self.converged,
            "status": self.status,
            "wall_time_ms": self.wall_time_ms,
            "kkt": self.kkt.summary() if self.kkt is not None else None,
        }


def default_start(ocp: RelaxedOcp) -> np.ndarray:
    """y = max(psi, 0) + 1, v = 0, xi = 1, then xi halved where the relaxed
    constraint is not strictly satisfied."""
    psi = ocp.data.psi
    y = np.maximum(psi, 0.0) + 1.0
    v = np.zeros(ocp.m)
    xi = np.ones(ocp.m)
    a = y - psi
    for _ in range(200):
        bad = sm.relaxed_residual(ocp.smoothing, a, xi) <= 0
        if not np.any(bad):
            break
        xi[bad] *= 0.5
    return ocp.pack(y, v, xi)


def _push_interior(ocp: RelaxedOcp, z, margin=1e-2):
    y, v, xi = ocp.split(np.array(z, dtype=float))
    psi = ocp.data.psi
    y = np.maximum(y, psi + margin)
    xi = np.maximum(xi, margin)
    return ocp.pack(y, v, xi)


def _frac_to_boundary(x, dx, tau):
    neg = dx < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * x[neg] / dx[neg])))


class _Engine:
    """Primal-dual barrier Newton iteration on the relaxed NLP.

    With ``penalty=None`` the state equation is an equality constraint;
    otherwise ``penalty=(eps, anchor)`` selects the penalized functional.
    """

    def __init__(self, ocp: RelaxedOcp, cfg: SolverConfig, penalty=None):
        self.ocp = ocp
        self.cfg = cfg
        self.penalty = penalty
        self.m = ocp.m
        self.w = ocp.w
        self.fn = ocp.smoothing
        self.has_R = bool(np.isfinite(ocp.xi_bound))
        self.delta_last = 0.0
        # internal normalization of the scaled constraint: unit slope in y - psi
        # at the corner (a, xi) = (0, inf); the feasible set is unchanged
        self.sigma = self.fn.scale * float(sm.theta_deriv(self.fn, 0.0))
        if penalty is not None:
            eps, anchor = penalty
            self.eps = float(eps)
            self.anchor = np.asarray(anchor, dtype=float)
            a = ocp.A
            self._prox_y = (a.T @ a).tocsr()

    # -- evaluation -----------------------------------------------------
    def f(self, x):
        if self.penalty is None:
            return self.ocp.objective(x) / self.w
        return self.ocp.penalized_objective(x, self.eps, self.anchor) / self.w

    def grad(self, x):
        if self.penalty is None:
            return self.ocp.objective_grad(x) / self.w
        return self.ocp.penalized_grad(x, self.eps, self.anchor) / self.w

    def d_parts(self, x):
        m = self.m
        c, c_a, c_b, c_aa, c_ab, c_bb = (t / self.sigma for t in self.ocp.complementarity_derivs(x, tol=np.inf))
        if self.has_R:
            xi = x[2 * m:]
            dR = self.ocp.xi_bound**2 / self.w - float(xi @ xi)
            c = np.append(c, dR)
        return c, c_a, c_b, c_aa, c_ab, c_bb

    def jd_t(self, x, c_a, c_b, vec):
        """J_d^T vec."""
        m = self.m
        out = np.zeros(3 * m)
        out[:m] = c_a * vec[:m]
        out[2 * m:] = c_b * vec[:m]
        if self.has_R:
            out[2 * m:] += -2.0 * x[2 * m:] * vec[m]
        return out

    def jd(self, x, c_a, c_b, dx):
        m = self.m
        out = c_a * dx[:m] + c_b * dx[2 * m:]
        if self.has_R:
            out = np.append(out, -2.0 * float(x[2 * m:] @ dx[2 * m:]))
        return out

    # -- iteration ------------------------------------------------------
    def residuals(self, x, s, lam, eta, zy, zxi):
        """Everything the iteration needs at one primal-dual point."""
        ocp, m = self.ocp, self.m
        d, c_a, c_b, c_aa, c_ab, c_bb = self.d_parts(x)
        gy, gxi = x[:m] - ocp.data.psi, x[2 * m:]
        g = self.grad(x)
        ceq = jac = None
        rx = g - self.jd_t(x, c_a, c_b, eta)
        rx[:m] -= zy
        rx[2 * m:] -= zxi
        if self.penalty is None:
            ceq = ocp.state_residual(x)
            jac = ocp.state_jacobian(x)
            rx += jac.T @ lam
        return dict(d=d, c_a=c_a, c_b=c_b, c_aa=c_aa, c_ab=c_ab, c_bb=c_bb, gy=gy, gxi=gxi, g=g,
                    ceq=ceq, jac=jac, rx=rx)

    def errors(self, res, s, lam, eta, zy, zxi, mu):
        """Scaled (dual, primal, complementarity) errors of the barrier problem."""
        smax = 100.0
        mults = [eta, zy, zxi] + ([] if lam is None else [lam])
        sd = max(smax, sum(float(np.sum(np.abs(u))) for u in mults) / sum(u.size for u in mults)) / smax
        bnd = [eta, zy, zxi]
        sc = max(smax, sum(float(np.sum(np.abs(u))) for u in bnd) / sum(u.size for u in bnd)) / smax
        d = res["d"]
        m = self.m
        prim = float(np.max(np.abs(d[:m] - s[:m])))
        if self.has_R:
            prim = max(prim, abs(d[m] - s[m]))
        if res["ceq"] is not None:
            prim = max(prim, float(np.max(np.abs(res["ceq"]))))
        comp = max(float(np.max(np.abs(s * eta - mu))), float(np.max(np.abs(res["gy"] * zy - mu))),
                   float(np.max(np.abs(res["gxi"] * zxi - mu))))
        return float(np.max(np.abs(res["rx"]))) / sd, prim, comp / sc

    def infeasibility(self, x, s, d=None, ceq=None):
        m = self.m
        d = self.d_parts(x)[0] if d is None else d
        viol = float(np.sum(np.abs(d[:m] - s[:m])))
        if self.has_R:
            viol += abs(d[m] - s[m])
        if self.penalty is None:
            ceq = self.ocp.state_residual(x) if ceq is None else ceq
            viol += float(np.sum(np.abs(ceq)))
        return viol

    def barrier_value(self, x, s, mu):
        m = self.m
        gy, gxi = x[:m] - self.ocp.data.psi, x[2 * m:]
        if np.any(gy <= 0) or np.any(gxi <= 0) or np.any(s <= 0):
            return np.inf
        return self.f(x) - mu * (np.sum(np.log(gy)) + np.sum(np.log(gxi)) + np.sum(np.log(s)))

    def run(self, z0, mu0=None, max_iter=None, mult_init=1.0, warm=None):
        cfg = self.cfg
        ocp = self.ocp
        m = self.m
        x = np.array(z0, dtype=float)
        mu = cfg.mu_init if mu0 is None else mu0
        max_iter = cfg.max_iter if max_iter is None else max_iter

        d = self.d_parts(x)[0]
        s_floor = np.full(d.size, 1e-2)
        s = np.maximum(d, s_floor)
        zy = np.full(m, mult_init)
        zxi = np.full(m, mult_init)
        eta = np.full(d.size, mult_init)
        lam = np.zeros(m) if self.penalty is None else None
        if warm is not None:
            # multipliers of a neighbouring problem; eta is rescaled so that the
            # density multiplier r carries over unchanged
            gy0, gxi0 = x[:m] - ocp.data.psi, x[2 * m:]
            u = sm.complement(self.fn, gy0) + sm.complement(self.fn, gxi0)
            eta[:m] = np.maximum(warm.r * u * self.sigma / self.fn.scale, 0.0)
            zy = np.maximum(warm.z_y, 0.0)
            zxi = np.maximum(warm.z_xi, 0.0)
            if lam is not None:
                lam = np.array(warm.q, dtype=float)
            s = np.maximum(d, np.minimum(s_floor, mu / np.maximum(eta, 1e-300)))
            eta = np.maximum(eta, mu / s)
            zy = np.maximum(zy, 1e-2 * mu / gy0)
            zxi = np.maximum(zxi, 1e-2 * mu / gxi0)

        theta_init = self.infeasibility(x, s)
        theta_max = 1e4 * max(1.0, theta_init)
        theta_min = 1e-4 * max(1.0, theta_init)
        filt: list[tuple[float, float]] = []
        history = []
        status = "max_iter"
        it = 0
        # filter line-search constants
        g_th, g_ph, s_th, s_ph, dlt, eta_phi = 1e-5, 1e-8, 1.1, 2.3, 1.0, cfg.armijo

        for it in range(max_iter + 1):
            res = self.residuals(x, s, lam, eta, zy, zxi)
            errs = self.errors(res, s, lam, eta, zy, zxi, 0.0)
            e0 = max(errs)
            history.append({"iter": it, "mu": mu, "error": e0, "errs": errs})
            if e0 <= cfg.tol:
                if self._certified(x, lam, eta, res["d"], res["ceq"]):
                    status = "converged"
                    break
                if lam is not None and float(np.linalg.norm(res["ceq"])) > cfg.feas_tol:
                    # v is free and enters the state equation linearly, so the
                    # residual can be absorbed exactly without touching any bound
                    xp = x.copy()
                    xp[m:2 * m] += res["ceq"]
                    resp = self.residuals(xp, s, lam, eta, zy, zxi)
                    if max(self.errors(resp, s, lam, eta, zy, zxi, 0.0)) <= cfg.tol and self._certified(
                            xp, lam, eta, resp["d"], resp["ceq"]):
                        x = xp
                        history[-1]["kind"] = "polish"
                        status = "converged"
                        break
            if it == max_iter:
                break

            mu_old = mu
            while max(self.errors(res, s, lam, eta, zy, zxi, mu)) <= cfg.kappa_eps * mu and mu > cfg.mu_min:
                mu = max(cfg.mu_min, min(cfg.mu_factor * mu, mu**cfg.mu_power))
            if mu != mu_old:
                filt = []
            tau = max(cfg.tau_min, 1.0 - mu)

            d, c_a, c_b = res["d"], res["c_a"], res["c_b"]
            gy, gxi, g, jac, ceq = res["gy"], res["gxi"], res["g"], res["jac"], res["ceq"]
            sig_s = eta / s
            rt = res["rx"].copy()
            rt[:m] += zy - mu / gy
            rt[2 * m:] += zxi - mu / gxi

            y = x[:m]
            hyy = zy / gy - eta[:m] * res["c_aa"] + sig_s[:m] * c_a**2
            hyx = -eta[:m] * res["c_ab"] + sig_s[:m] * c_a * c_b
            hxx = zxi / gxi - eta[:m] * res["c_bb"] + sig_s[:m] * c_b**2
            if self.has_R:
                hxx = hxx + 2.0 * eta[m]
            if self.penalty is None:
                hyy = hyy + 1.0 + lam * ocp.data.g.d2g(y)
                hvv = np.full(m, ocp.data.nu)
            else:
                cres = ocp.state_residual(x)
                hyy = hyy + 1.0 + ocp.data.g.d2g(y) * cres / self.eps
                hvv = np.full(m, ocp.data.nu + 1.0)
                hxx = hxx + 1.0
            u_R = None
            if self.has_R:
                u_R = np.zeros(3 * m)
                u_R[2 * m:] = -2.0 * x[2 * m:]

            def direction(dres, cres):
                # dres plays the role of d - s and cres of the state residual;
                # second-order corrections pass modified values of both
                r1 = -rt + self.jd_t(x, c_a, c_b, mu / s - eta - sig_s * dres)
                dx_, dlam_ = self._newton(x, hyy, hyx, hxx, hvv, r1, None if cres is None else -cres, jac,
                                          u_R, sig_s[m] if self.has_R else 0.0)
                if not np.all(np.isfinite(dx_)):
                    raise np.linalg.LinAlgError("non-finite Newton step")
                return dx_, dlam_, self.jd(x, c_a, c_b, dx_) + dres

            try:
                dx, dlam, ds = direction(d - s, ceq)
            except np.linalg.LinAlgError as exc:
                log.debug("linear solver failure: %s", exc)
                status = "linear_solver"
                break

            deta = mu / s - eta - sig_s * ds
            dzy = mu / gy - zy - zy / gy * dx[:m]
            dzxi = mu / gxi - zxi - zxi / gxi * dx[2 * m:]
            a_parts = (_frac_to_boundary(gy, dx[:m], tau), _frac_to_boundary(gxi, dx[2 * m:], tau),
                       _frac_to_boundary(s, ds, tau))
            a_max = min(a_parts)
            a_dual = min(_frac_to_boundary(zy, dzy, tau), _frac_to_boundary(zxi, dzxi, tau),
                         _frac_to_boundary(eta, deta, tau))

            theta0 = self.infeasibility(x, s, d, ceq)
            phi0 = self.barrier_value(x, s, mu)
            gphi = float(g @ dx) - mu * (float(np.sum(dx[:m] / gy)) + float(np.sum(dx[2 * m:] / gxi))
                                          + float(np.sum(ds / s)))
            if gphi < 0:
                a_min = 0.05 * min(g_th, g_ph * theta0 / -gphi, dlt * theta0**s_th / (-gphi) ** s_ph)
            else:
                a_min = 0.05 * g_th
            a_min = max(a_min, cfg.min_step)

            def acceptable(xt, st, step, gphi_step):
                """Filter test; returns (kind or '', theta, phi) of the trial point."""
                phit = self.barrier_value(xt, st, mu)
                if not np.isfinite(phit):
                    return "", np.inf, phit
                tht = self.infeasibility(xt, st)
                if tht >= theta_max or any(tht >= fth and phit >= fph for fth, fph in filt):
                    return "", tht, phit
                switching = gphi < 0 and step * (-gphi) ** s_ph > dlt * theta0**s_th
                if switching and theta0 <= theta_min:
                    if phit <= phi0 + eta_phi * gphi_step:
                        return "f", tht, phit
                elif tht <= (1 - g_th) * theta0 or phit <= phi0 - g_ph * theta0:
                    return "h", tht, phit
                return "", tht, phit

            step = a_max
            accepted = False
            kind = ""
            first = True
            while step >= a_min:
                xt = x + step * dx
                st = s + step * ds
                kind, tht, _ = acceptable(xt, st, step, step * gphi)
                if kind:
                    accepted = True
                    break
                if first and np.isfinite(tht) and tht >= theta0:
                    # second-order correction against the Maratos effect
                    dsoc, csoc, th_prev = step * (d - s), None if ceq is None else step * ceq, theta0
                    for _ in range(4):
                        dt = self.d_parts(xt)[0] if np.all(xt[:m] >= ocp.data.psi) and np.all(xt[2 * m:] >= 0) else None
                        if dt is None:
                            break
                        dsoc = dsoc + dt - st
                        if csoc is not None:
                            csoc = csoc + ocp.state_residual(xt)
                        try:
                            dxc, dlc, dsc = direction(dsoc, csoc)
                        except np.linalg.LinAlgError:
                            break
                        a_soc = min(_frac_to_boundary(gy, dxc[:m], tau), _frac_to_boundary(gxi, dxc[2 * m:], tau),
                                    _frac_to_boundary(s, dsc, tau))
                        xt, st = x + a_soc * dxc, s + a_soc * dsc
                        kind, th_soc, _ = acceptable(xt, st, step, step * gphi)
                        if kind:
                            break
                        if not th_soc < 0.99 * th_prev:
                            break
                        th_prev = th_soc
                    if kind:
                        accepted = True
                        dx, dlam, ds, step = dxc, dlc, dsc, a_soc
                        kind += "s"
                        break
                first = False
                step *= cfg.backtrack

            if accepted:
                if kind.startswith("h"):
                    filt.append(((1 - g_th) * theta0, phi0 - g_ph * theta0))
                if kind.endswith("s"):
                    deta = mu / s - eta - sig_s * ds
                    dzy = mu / gy - zy - zy / gy * dx[:m]
                    dzxi = mu / gxi - zxi - zxi / gxi * dx[2 * m:]
                    a_dual = min(_frac_to_boundary(zy, dzy, tau), _frac_to_boundary(zxi, dzxi, tau),
                                 _frac_to_boundary(eta, deta, tau))
                a_d = a_dual
            else:
                # soft restoration: accept a step that reduces the barrier KKT error
                step = a_d = min(a_max, a_dual)
                e_mu = max(self.errors(res, s, lam, eta, zy, zxi, mu))
                ok = False
                for _ in range(30):
                    xt, st = x + step * dx, s + step * ds
                    if np.isfinite(self.barrier_value(xt, st, mu)):
                        lt = None if lam is None else lam + step * dlam
                        et, zyt, zxt = eta + step * deta, zy + step * dzy, zxi + step * dzxi
                        rest = self.residuals(xt, st, lt, et, zyt, zxt)
                        if max(self.errors(rest, st, lt, et, zyt, zxt, mu)) <= (1 - 1e-4) * e_mu:
                            ok = True
                            break
                    step *= cfg.backtrack
                    a_d = step
                if not ok:
                    status = "line_search"
                    break
                kind = "r"

            x = xt
            s = st
            if lam is not None:
                lam = lam + step * dlam
            eta = eta + a_d * deta
            zy = zy + a_d * dzy
            zxi = zxi + a_d * dzxi
            # keep bound multipliers within a band of the central path
            kap = 1e10
            gy, gxi = x[:m] - ocp.data.psi, x[2 * m:]
            zy = np.clip(zy, mu / (kap * gy), kap * mu / gy)
            zxi = np.clip(zxi, mu / (kap * gxi), kap * mu / gxi)
            eta = np.clip(eta, mu / (kap * s), kap * mu / s)
            history[-1].update(step=step, a_max=a_max, a_parts=a_parts, dual_step=a_d, delta_w=self.delta_last, kind=kind)

        self.x, self.s, self.lam, self.eta, self.zy, self.zxi = x, s, lam, eta, zy, zxi
        self.mu = mu
        self.iterations = it
        self.status = status
        self.history = history
        return status

    def _certified(self, x, lam, eta, d, ceq):
        cfg = self.cfg
        m = self.m
        if self.penalty is None and float(np.linalg.norm(ceq)) > cfg.feas_tol:
            return False
        if np.min(d[:m]) < -cfg.feas_tol:
            return False
        if self.has_R and d[m] < -cfg.feas_tol:
            return False
        if self.penalty is not None:
            return True
        kkt = self.kkt(x, lam, eta)
        self.last_kkt = kkt
        return kkt.max_residual <= cfg.tol

    def multipliers(self, x, lam, eta):
        """(q, r) in density units from the NLP multipliers."""
        m = self.m
        u = sm.complement(self.fn, np.maximum(x[:m] - self.ocp.data.psi, 0.0)) + sm.complement(
            self.fn, np.maximum(x[2 * m:], 0.0))
        r = eta[:m] * self.fn.scale / (self.sigma * u)
        if lam is None:
            q = self.ocp.penalty_multiplier(x, self.eps)
        else:
            q = lam
        return q, r

    def kkt(self, x, lam, eta):
        q, r = self.multipliers(x, lam, eta)
        return self.ocp.kkt_residuals(x, q, r)

    # -- linear algebra -------------------------------------------------
    def _newton(self, x, hyy, hyx, hxx, hvv, r1, r2, jac, u_R, sig_R):
        """Solve the condensed Newton system with inertia correction.

        With the state equation as a constraint, v and the multiplier step are
        eliminated (dv = B dy - dxi - r2), leaving the reduced Hessian on the
        null space of the state Jacobian,

            M = H_(y,xi) + nu [B^T; -I] [B, -I],

        which is banded when (y_i, xi_i) are interleaved.  The KKT matrix has
        the inertia required for a descent direction exactly when M is
        positive definite, so a failed banded Cholesky triggers
        delta * I regularization.  In penalty mode the full Hessian is
        factorized the same way with (y_i, v_i, xi_i) interleaved.
        """
        m = self.m
        if self.penalty is None:
            bop = jac[:, :m]
            base = _interleave([[_diag(hyy), _diag(hyx)], [_diag(hyx), _diag(hxx)]])
            coupling = _interleave([[(bop.T @ bop).tocsr(), -bop.T], [-bop, sp.identity(m)]])
        else:
            jac_s = self.ocp.state_jacobian(x)
            psd = ((jac_s.T @ jac_s) / self.eps
                   + sp.block_diag([self._prox_y, sp.csr_matrix((2 * m, 2 * m))])).tocsr()
            blocks = sp.bmat([[_diag(hyy), None, _diag(hyx)], [None, _diag(hvv), None],
                              [_diag(hyx), None, _diag(hxx)]]).tocsr() + psd
            base = _interleave([[blocks[i * m:(i + 1) * m, j * m:(j + 1) * m] for j in range(3)]
                                for i in range(3)])
            coupling = None
        nb = base.shape[0]
        bw = _bandwidth(base if coupling is None else base + coupling)
        eye_b = _band_identity(nb, bw)
        base_b = _to_band(base, bw)
        coup_b = None if coupling is None else _to_band(coupling, bw)

        delta = 0.0
        first = True
        for _ in range(80):
            if coupling is None:
                mb = base_b + delta * eye_b
            else:
                mb = base_b + delta * eye_b + (hvv[0] + delta) * coup_b
            try:
                chol = sla.cholesky_banded(mb, lower=False, check_finite=False)
                if np.all(np.isfinite(chol)):
                    break
            except np.linalg.LinAlgError:
                pass
            if first:
                delta = 1e-4 if self.delta_last == 0 else max(1e-20, self.delta_last / 3)
                first = False
            else:
                delta *= 100 if self.delta_last == 0 else 8
            if delta > 1e40:
                raise np.linalg.LinAlgError("inertia correction failed")
        else:
            raise np.linalg.LinAlgError("inertia correction failed")
        self.delta_last = delta
        hv = hvv + delta

        def chol_solve(rhs):
            return sla.cho_solve_banded((chol, False), rhs, check_finite=False)

        if self.penalty is None:
            bop = jac[:, :m]

            def solve(rr1, rr2):
                ry, rv, rx = rr1[:m], rr1[m:2 * m], rr1[2 * m:]
                ty = ry + bop.T @ (hv * rr2 + rv)
                tx = rx - rv - hv * rr2
                sol = chol_solve(_weave(ty, tx))
                dy, dxi = sol[0::2], sol[1::2]
                dv = bop @ dy - dxi - rr2
                dl = hv * dv - rv
                return np.concatenate([dy, dv, dxi]), dl
        else:
            def solve(rr1, rr2):
                sol = chol_solve(_weave(rr1[:m], rr1[m:2 * m], rr1[2 * m:]))
                return np.concatenate([sol[0::3], sol[1::3], sol[2::3]]), None

        dx, dl = solve(r1, r2)
        if u_R is not None and sig_R > 0:
            # rank-one term sig_R * u u^T from the xi-norm constraint (Woodbury)
            zero2 = None if r2 is None else np.zeros_like(r2)
            wx, wl = solve(u_R, zero2)
            coef = sig_R * float(u_R @ dx) / (1.0 + sig_R * float(u_R @ wx))
            dx = dx - coef * wx
            if dl is not None:
                dl = dl - coef * wl
        return dx, dl


def _diag(v):
    return sp.diags(np.asarray(v, dtype=float)).tocsr()


def _interleave(blocks):
    """Assemble a k x k block matrix (m x m blocks) with node-major ordering."""
    k = len(blocks)
    m = blocks[0][0].shape[0]
    rows, cols, vals = [], [], []
    for i in range(k):
        for j in range(k):
            b = blocks[i][j]
            if b is None:
                continue
            b = sp.coo_matrix(b)
            rows.append(b.row * k + i)
            cols.append(b.col * k + j)
            vals.append(b.data)
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(k * m, k * m)).tocsr()


def _weave(*parts):
    return np.column_stack(parts).ravel()


def _bandwidth(a) -> int:
    c = sp.coo_matrix(a)
    return int(np.max(np.abs(c.row - c.col), initial=0))


def _to_band(a, u):
    """Upper banded storage ab[u + i - j, j] = a[i, j] for i <= j."""
    c = sp.coo_matrix(a)
    keep = c.row <= c.col
    n = a.shape[0]
    ab = np.zeros((u + 1, n))
    np.add.at(ab, (u + c.row[keep] - c.col[keep], c.col[keep]), c.data[keep])
    return ab


def _band_identity(n, u):
    ab = np.zeros((u + 1, n))
    ab[u, :] = 1.0
    return ab


def _report(ocp: RelaxedOcp, eng: _Engine, t0: float, iterations: int, status: str,
            history=None) -> SolveReport:
    x = eng.x
    q, r = eng.multipliers(x, eng.lam, eng.eta)
    try:
        kkt = ocp.kkt_residuals(x, q, r)
    except (ValueError, np.linalg.LinAlgError):
        kkt = None
    return SolveReport(
        z=x.copy(),
        q=np.asarray(q, dtype=float).copy(),
        r=r.copy(),
        z_y=eng.zy.copy(),
        z_xi=eng.zxi.copy(),
        objective=ocp.objective(x),
        state_residual_2=float(np.linalg.norm(ocp.state_residual(x))),
        comp_error=ocp.comp_error(x),
        iterations=iterations,
        converged=status == "converged",
        status=status,
        kkt=kkt,
        alpha=ocp.smoothing.alpha,
        wall_time_ms=1e3 * (time.perf_counter() - t0),
        history=history if history is not None else eng.history,
    )


def solve_barrier(ocp: RelaxedOcp, cfg: SolverConfig | None = None, start=None,
                  warm: SolveReport | None = None) -> SolveReport:
    """Primal-dual interior-point solve of the relaxed problem.

    ``warm`` is a report from a nearby problem (typically the previous alpha);
    its iterate and multipliers seed the solve and the barrier starts small.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    if warm is not None and start is None:
        start = warm.z
    margin = 1e-10 if warm is not None else 1e-2
    z0 = default_start(ocp) if start is None else _push_interior(ocp, start, margin)
    eng = _Engine(ocp, cfg)
    if warm is not None:
        status = eng.run(z0, mu0=max(cfg.mu_min, min(cfg.mu_init, cfg.warm_mu)), warm=warm)
    else:
        status = eng.run(z0)
    rep = _report(ocp, eng, t0, eng.iterations, status)
    log.info("barrier alpha=%g: %s after %d iterations, obj=%.6e", ocp.smoothing.alpha,
             status, eng.iterations, rep.objective)
    return rep


class _AnchorAcceleration:
    """Anderson mixing for the self-anchored proximal iteration.

    The outer loop is a fixed-point iteration anchor -> z(anchor) that
    contracts only by about 1/(1 + nu/2) per step, and the proximal terms
    vanish from the stationarity conditions only at the fixed point.  Mixing
    the last few iterates removes most of the slow linear tail.  Depth 0
    gives the plain proximal step.
    """

    def __init__(self, depth: int):
        self.depth = depth
        self.prev = None  # (residual, z) of the last step
        self.dres: list[np.ndarray] = []
        self.dz: list[np.ndarray] = []
        self.best = np.inf
        self.mixed = False

    def restart(self):
        self.dres.clear()
        self.dz.clear()
        self.prev = None
        self.mixed = False

    def step(self, anc, z, reset=False):
        if self.depth == 0:
            return z.copy()
        fw = z - anc
        nrm = float(np.linalg.norm(fw))
        if reset or nrm > 10 * self.best:
            # penalty parameter changed or mixing went astray: restart from a plain step
            self.restart()
            self.best = np.inf if reset else nrm
        self.best = min(self.best, nrm)
        if self.prev is not None:
            self.dres.append(fw - self.prev[0])
            self.dz.append(z - self.prev[1])
            del self.dres[:-self.depth], self.dz[:-self.depth]
        self.prev = (fw, z.copy())
        self.mixed = bool(self.dres)
        if not self.mixed:
            return z.copy()
        F = np.column_stack(self.dres)
        gamma, *_ = np.linalg.lstsq(F, fw, rcond=1e-10)
        return z - np.column_stack(self.dz) @ gamma


def solve_penalty(ocp: RelaxedOcp, cfg: SolverConfig | None = None, anchor_mode: str = "self-anchored",
                  anchor=None, start=None) -> SolveReport:
    """Penalization continuation: minimize the penalized functional for a
    decreasing sequence of eps under the relaxed constraints.

    In ``self-anchored`` mode the anchor is moved to the current iterate after
    every outer step (a proximal iteration); in ``fixed`` mode ``anchor`` is
    used throughout.  Stops once the state residual is below ``tol`` and, in
    self-anchored mode, the anchor has stopped moving.
    """
    cfg = cfg or SolverConfig()
    if anchor_mode not in ("self-anchored", "fixed"):
        raise ValueError(f"unknown anchor mode {anchor_mode!r}")
    if anchor_mode == "fixed" and anchor is None:
        raise ValueError("fixed anchor mode needs an anchor")
    t0 = time.perf_counter()
    z = default_start(ocp) if start is None else _push_interior(ocp, start)
    anc = np.array(z if anchor is None else anchor, dtype=float)
    eps = cfg.eps_init
    prox_tol = cfg.prox_tol if cfg.prox_tol is not None else cfg.tol
    # inner solves run tighter than the outer test, and tighten further as the
    # anchor settles, so the measured moves are not solver noise
    inner_tol = 0.1 * cfg.tol
    history = []
    total = 0
    status = "max_iter"
    eng = None
    mu0 = cfg.mu_init
    accel = _AnchorAcceleration(cfg.anderson)
    accepted = None
    res_prev = np.inf
    inner_floor = 1e-3 * cfg.tol
    for outer in range(cfg.max_outer):
        eng = _Engine(ocp, replace(cfg, tol=inner_tol), penalty=(eps, anc))
        inner = eng.run(z, mu0=mu0)
        total += eng.iterations
        z_new = eng.x
        res = float(np.linalg.norm(ocp.state_residual(z_new)))
        move = float(np.max(np.abs(z_new - anc)))
        try:
            kkt_max = eng.kkt(z_new, eng.lam, eng.eta).max_residual
        except (ValueError, np.linalg.LinAlgError):
            kkt_max = np.inf
        history.append({"outer": outer, "eps": eps, "state_residual_2": res, "move": move,
                        "kkt": kkt_max, "objective": ocp.objective(z_new), "inner_status": inner,
                        "inner_iterations": eng.iterations})
        log.debug("penalty outer %d eps=%.1e res=%.3e move=%.3e", outer, eps, res, move)
        done_eps = res <= cfg.tol
        # the proximal terms leak into the relaxed stationarity (through A^T A for
        # y), so the relaxed-problem certificate is checked explicitly; it does not
        # depend on how the inner solve ended
        if done_eps and (anchor_mode == "fixed" or move <= prox_tol) and kkt_max <= cfg.tol:
            z = z_new
            status = "converged"
            break
        if inner not in ("converged", "max_iter"):
            if accel.mixed:
                # the extrapolated anchor was too aggressive: fall back to a plain step
                log.debug("penalty outer %d: inner %s after mixing, restarting", outer, inner)
                accel.restart()
                anc = z.copy()
                continue
            if inner == "line_search" and inner_tol < 0.1 * cfg.tol:
                # the inner target sits below the rounding floor of the penalized
                # gradient; keep the (still interior) iterate and relax the target
                inner_tol *= 10
                inner_floor = inner_tol
            else:
                status = inner
                z = z_new
                break
        z = z_new
        accepted = eng
        if anchor_mode == "self-anchored":
            anc = accel.step(anc, z, reset=not done_eps)
        # shrink eps only while the residual stalls; early residuals mostly
        # reflect a far-away anchor, and an over-small eps ruins the conditioning
        if not done_eps and res > 0.5 * res_prev:
            if eps * cfg.eps_factor < cfg.eps_min:
                status = "eps_underflow"
                break
            eps *= cfg.eps_factor
        res_prev = res
        inner_tol = max(inner_floor, min(inner_tol, 1e-2 * move))
        # warm inner solves start near the central path of a small barrier
        mu0 = max(cfg.mu_min, min(cfg.mu_init, eng.mu * 10))
    # an iteration limit reached right after a restart reports the last accepted iterate
    final = accepted if (status == "max_iter" and accepted is not None) else eng
    rep = _report(ocp, final, t0, total, status, history=history)
    rep.history = history
    return rep


def alpha_continuation(grid: Grid, data: ProblemData, kind: str, alphas, cfg: SolverConfig | None = None,
                       weighting: str = "node-sum", warm_start: bool = True,
                       xi_bound: float = np.inf) -> list[SolveReport]:
    """Solve the relaxed problem along a strictly decreasing alpha schedule."""
    cfg = cfg or SolverConfig()
    alphas = [float(a) for a in alphas]
    if any(a <= 0 for a in alphas):
        raise ValueError("alphas must be positive")
    if any(b >= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alpha schedule must be strictly decreasing")
    reports = []
    prev = None
    for alpha in alphas:
        ocp = RelaxedOcp(grid, data, sm.SmoothingFn(kind, alpha), weighting=weighting, xi_bound=xi_bound)
        warm = prev if (warm_start and prev is not None and prev.converged) else None
        attempts = []
        if warm is None:
            attempts.append(solve_barrier(ocp, cfg))
        else:
            # a smaller starting mu keeps the iterates on the previous
            # central path when the relaxed set narrows sharply
            for shrink in WARM_RETRY_SHRINK:
                attempts.append(solve_barrier(ocp, replace(cfg, warm_mu=max(cfg.mu_min, cfg.warm_mu * shrink)),
                                              warm=warm))
                if attempts[-1].converged:
                    break
                log.warning("warm start at alpha=%g, mu0=%.0e failed (%s)", alpha, cfg.warm_mu * shrink,
                            attempts[-1].status)
            else:
                log.warning("retrying alpha=%g cold", alpha)
                attempts.append(solve_barrier(ocp, cfg))
        rep = attempts[-1]
        # retries count toward the cost of the stage
        rep.iterations = sum(a.iterations for a in attempts)
        rep.wall_time_ms = sum(a.wall_time_ms for a in attempts)
        reports.append(rep)
        prev = rep
    return reports


def config_dict(cfg: SolverConfig) -> dict:
    return asdict(cfg)
