"""Reference solvers for the discrete semilinear obstacle problem.

For a fixed control v find y >= psi and xi >= 0 with

    A y + g(y) = f + v + xi,   xi_i (y_i - psi_i) = 0.

``solve_vi`` runs a semismooth Newton iteration on the min-reformulation
and falls back to nonlinear projected Gauss-Seidel if Newton stalls.
``brute_force_active_set`` enumerates every active set and is meant only as
an oracle on tiny grids.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, ProblemData, assemble_laplacian, check_field

log = logging.getLogger(__name__)

Y_BOX = 1e6


@dataclass
class ViSolution:
    y: np.ndarray
    xi: np.ndarray
    residual_inf: float
    state_residual_inf: float
    iterations: int
    converged: bool = True
    method: str = "newton"


def _state(A, data: ProblemData, v, y):
    return A @ y + data.g.g(y) - data.f - v


def _finish(A, data, v, y, iterations, converged, method) -> ViSolution:
    r = _state(A, data, v, y)
    gap = y - data.psi
    active = gap <= r
    xi = np.where(active, np.maximum(r, 0.0), 0.0)
    nat = float(np.max(np.abs(np.minimum(gap, r)), initial=0.0))
    sres = float(np.max(np.abs(r - xi), initial=0.0))
    return ViSolution(y=y, xi=xi, residual_inf=nat, state_residual_inf=sres,
                      iterations=iterations, converged=converged, method=method)


def _pgs(A, data, v, y, tol, max_sweeps):
    """Nonlinear projected Gauss-Seidel; each node solves a scalar monotone equation."""
    A = A.tocsr()
    diag = A.diagonal()
    rhs = data.f + v
    psi = data.psi
    g = data.g
    for sweep in range(1, max_sweeps + 1):
        change = 0.0
        for i in range(y.size):
            lo, hi = A.indptr[i], A.indptr[i + 1]
            off = float(A.data[lo:hi] @ y[A.indices[lo:hi]]) - diag[i] * y[i]
            b = rhs[i] - off
            t = y[i]
            for _ in range(50):
                gt = np.array([t])
                fval = diag[i] * t + g.g(gt)[0] - b
                dval = diag[i] + g.dg(gt)[0]
                dt = fval / dval
                t -= dt
                if abs(dt) <= 1e-15 * max(1.0, abs(t)):
                    break
            t = min(max(t, psi[i]), Y_BOX)
            change = max(change, abs(t - y[i]))
            y[i] = t
        r = _state(A, data, v, y)
        nat = float(np.max(np.abs(np.minimum(y - psi, r)), initial=0.0))
        if nat <= tol:
            return y, sweep, True
    return y, max_sweeps, False


def solve_vi(grid: Grid, data: ProblemData, v, tol: float = 1e-10, max_iter: int = 100,
             y0=None, pgs_sweeps: int = 20000) -> ViSolution:
    """Solve the obstacle problem at control ``v`` to ``tol`` in the max norm."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    v = check_field(grid, v, "v")
    A = assemble_laplacian(grid)
    psi = data.psi
    y = np.maximum(psi, 0.0) if y0 is None else np.maximum(check_field(grid, y0, "y0"), psi)

    def merit(y):
        return np.minimum(y - psi, _state(A, data, v, y))

    F = merit(y)
    nrm = float(np.max(np.abs(F), initial=0.0))
    it = 0
    while it < max_iter and nrm > tol:
        it += 1
        r = _state(A, data, v, y)
        active = (y - psi) <= r
        jac = (A + sp.diags(data.g.dg(y))).tocsr()
        # active rows become identity rows
        keep = sp.diags((~active).astype(float))
        jac = (keep @ jac + sp.diags(active.astype(float))).tocsc()
        try:
            dy = spla.spsolve(jac, -F)
        except RuntimeError:
            break
        if not np.all(np.isfinite(dy)):
            break
        t = 1.0
        while t > 1e-8:
            yt = np.clip(y + t * dy, -Y_BOX, Y_BOX)
            Ft = merit(yt)
            nt = float(np.max(np.abs(Ft), initial=0.0))
            if nt <= (1 - 1e-4 * t) * nrm or nt <= tol:
                break
            t *= 0.5
        else:
            log.debug("semismooth Newton stalled at residual %.3e", nrm)
            break
        y, F, nrm = yt, Ft, nt

    if nrm <= tol:
        # any violation of y >= psi is below tol here; remove rounding residue
        return _finish(A, data, v, np.maximum(y, psi), it, True, "newton")

    y, sweeps, ok = _pgs(A, data, v, np.maximum(y, psi), tol, pgs_sweeps)
    sol = _finish(A, data, v, y, it + sweeps, ok, "pgs")
    if not ok:
        log.warning("obstacle solve did not reach tol %.1e (residual %.3e)", tol, sol.residual_inf)
    return sol


def _solve_inactive(A, data, v, y, free, tol=1e-13, max_iter=100):
    """Newton on the rows in ``free`` with the remaining entries of y held fixed."""
    if not np.any(free):
        return y, True
    Aff = A[free][:, free].tocsc()
    for _ in range(max_iter):
        r = _state(A, data, v, y)[free]
        if np.max(np.abs(r)) <= tol * max(1.0, float(np.max(np.abs(data.f[free] + v[free])))):
            return y, True
        jac = (Aff + sp.diags(data.g.dg(y[free]))).tocsc()
        dy = spla.spsolve(jac, -r)
        t = 1.0
        n0 = float(np.linalg.norm(r))
        while t > 1e-10:
            yt = y.copy()
            yt[free] += t * np.atleast_1d(dy)
            if np.linalg.norm(_state(A, data, v, yt)[free]) < (1 - 1e-4 * t) * n0:
                break
            t *= 0.5
        y = yt
    r = _state(A, data, v, y)[free]
    return y, bool(np.max(np.abs(r)) <= 1e-9)


def brute_force_active_set(grid: Grid, data: ProblemData, v, tol: float = 1e-10) -> ViSolution:
    """Enumerate all 2^k active sets and return the unique consistent one.

    Candidates that coincide (a degenerate node with y = psi and xi = 0
    is consistent with both choices) are merged before the uniqueness check.
    """
    k = grid.interior_count
    if k > 16:
        raise ValueError(f"enumeration needs interior_count <= 16, got {k}")
    v = check_field(grid, v, "v")
    A = assemble_laplacian(grid).tocsr()
    psi = data.psi
    found: list[np.ndarray] = []
    for mask in itertools.product((False, True), repeat=k):
        active = np.array(mask)
        y = np.where(active, psi, np.maximum(psi, 0.0))
        y, ok = _solve_inactive(A, data, v, y, ~active)
        if not ok:
            continue
        xi = _state(A, data, v, y)
        scale = max(1.0, float(np.max(np.abs(xi))))
        if np.any(y[~active] < psi[~active] - tol * scale) or np.any(xi[active] < -tol * scale):
            continue
        if not any(np.max(np.abs(y - other)) <= 1e-8 * max(1.0, float(np.max(np.abs(y)))) for other in found):
            found.append(y)
    if not found:
        raise RuntimeError("no consistent active set found")
    if len(found) > 1:
        raise RuntimeError(f"{len(found)} distinct consistent active sets found")
    y = found[0]
    sol = _finish(A, data, v, y, 2**k, True, "enumeration")
    return sol
