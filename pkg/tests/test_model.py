import numpy as np
import pytest
import scipy.sparse as sp

from obstacle_relax import DomainError, ProblemData, RelaxedOcp, SmoothingFn, build_grid, example71_data, solve_state
from obstacle_relax.bench import _fd_gradient, _fd_jacobian, _rel, random_instance


def _ocp(n=20, kind="frac", alpha=1e-2, weighting="node-sum"):
    g = build_grid(n)
    return RelaxedOcp(g, example71_data(g), SmoothingFn(kind, alpha), weighting=weighting)


def test_objective_at_zero():
    ocp = _ocp()
    z = np.zeros(3 * ocp.m)
    assert ocp.objective(z) == pytest.approx(180.5, rel=1e-15)
    assert _ocp(weighting="cell").objective(z) == pytest.approx(180.5 * 0.0025, rel=1e-14)


def test_comp_error_and_constraint_on_obstacle():
    ocp = _ocp(alpha=0.1)
    d = ocp.data
    z = ocp.pack(d.psi, np.zeros(ocp.m), np.zeros(ocp.m))
    assert ocp.comp_error(z) == 0.0
    np.testing.assert_allclose(ocp.complementarity_constraints(z), 0.01 * np.log(2.0), rtol=1e-14)
    z2 = ocp.pack(d.psi + 2.0, np.zeros(ocp.m), np.full(ocp.m, 0.5))
    assert ocp.comp_error(z2) == pytest.approx(361 / 400, rel=1e-14)


def test_bound_violation_raises():
    ocp = _ocp(n=4)
    z = ocp.pack(ocp.data.psi - 1e-3, np.zeros(ocp.m), np.zeros(ocp.m))
    with pytest.raises(DomainError):
        ocp.complementarity_constraints(z)


@pytest.mark.parametrize("kind", ["frac", "exp", "log"])
@pytest.mark.parametrize("weighting", ["node-sum", "cell"])
def test_derivatives_match_differences(kind, weighting, rng):
    ocp, z = random_instance(4, rng, kind, 0.3, weighting)
    step = 1e-6
    assert _rel(ocp.objective_grad(z), _fd_gradient(ocp.objective, z, step)) < 1e-7
    assert _rel(ocp.state_jacobian(z).toarray(), _fd_jacobian(ocp.state_residual, z, step)) < 1e-7
    assert _rel(ocp.complementarity_jacobian(z).toarray(),
                _fd_jacobian(ocp.complementarity_constraints, z, step)) < 1e-6
    anchor = z + rng.normal(0, 0.1, z.size)
    assert _rel(ocp.penalized_grad(z, 0.3, anchor),
                _fd_gradient(lambda x: ocp.penalized_objective(x, 0.3, anchor), z, step)) < 1e-6
    hess = ocp.penalized_hessian(z, 0.3).toarray()
    fd_hess = _fd_jacobian(lambda x: ocp.penalized_grad(x, 0.3, anchor), z, step)
    assert _rel(hess, fd_hess) < 1e-6
    assert np.allclose(hess, hess.T)


def test_reduced_gradient_matches_dense_oracle(rng):
    from obstacle_relax.bench import dense_reduced_gradient
    from obstacle_relax.grid import linear

    g = build_grid(5)
    m = g.interior_count
    data = ProblemData(f=rng.normal(0, 3, m), psi=np.zeros(m), z_d=rng.normal(1, 0.2, m),
                       v_d=rng.normal(0, 1, m), nu=0.3, g=linear(2.0))
    ocp = RelaxedOcp(g, data, SmoothingFn("frac", 0.1))
    v, xi = rng.normal(0, 1, m), rng.uniform(0, 1, m)
    grad, _ = ocp.reduced_gradient(v, xi)
    np.testing.assert_allclose(grad, dense_reduced_gradient(ocp, v, xi), rtol=1e-10, atol=1e-12)


def test_solve_state_residual(rng):
    ocp = _ocp(n=10)
    v, xi = rng.normal(0, 10, ocp.m), rng.uniform(0, 5, ocp.m)
    y = solve_state(ocp, v, xi)
    assert np.max(np.abs(ocp.state_residual(ocp.pack(y, v, xi)))) <= 1e-9


def test_penalty_identities(rng):
    ocp, z = random_instance(4, rng)
    anchor = z.copy()
    base = ocp.objective(z)
    t1 = ocp.penalized_objective(z, 0.2, anchor) - base
    t2 = ocp.penalized_objective(z, 0.1, anchor) - base
    assert t2 == pytest.approx(2 * t1, rel=1e-12)
    np.testing.assert_allclose(ocp.penalty_multiplier(z, 0.25), 4 * ocp.state_residual(z), rtol=1e-14)
    with pytest.raises(ValueError):
        ocp.penalized_objective(z, 0.0, anchor)


def test_kkt_zero_at_unconstrained_stationary_point(rng):
    # y strictly above psi equal to z_d and v = v_d with r = 0, q = 0 is stationary
    g = build_grid(5)
    m = g.interior_count
    ocp0 = RelaxedOcp(g, example71_data(g), SmoothingFn("log", 0.1))
    y = ocp0.data.psi + 1.0
    data = ProblemData(f=ocp0.A @ y + y**3, psi=ocp0.data.psi, z_d=y, v_d=np.zeros(m))
    ocp = RelaxedOcp(g, data, SmoothingFn("log", 0.1))
    z = ocp.pack(y, np.zeros(m), np.zeros(m))
    rep = ocp.kkt_residuals(z, np.zeros(m), 0.0)
    assert rep.max_residual <= 1e-10
    np.testing.assert_allclose(rep.p, 0.0, atol=1e-14)
    np.testing.assert_allclose(rep.omega, 2 * y**3, rtol=1e-14)


def test_kkt_detects_nonstationary_point(rng):
    ocp, z = random_instance(4, rng)
    rep = ocp.kkt_residuals(z, np.zeros(ocp.m), 0.0)
    assert rep.max_residual > 1e-3
    with pytest.raises(ValueError):
        ocp.kkt_residuals(z, np.zeros(ocp.m), -1.0)


def test_kkt_per_node_multiplier_broadcast(rng):
    ocp, z = random_instance(4, rng)
    q = rng.normal(0, 1, ocp.m)
    a = ocp.kkt_residuals(z, q, 0.5)
    b = ocp.kkt_residuals(z, q, np.full(ocp.m, 0.5))
    assert a.summary() == b.summary()


def test_layout_checks():
    ocp = _ocp(n=4)
    with pytest.raises(ValueError):
        ocp.split(np.zeros(5))
    with pytest.raises(ValueError):
        RelaxedOcp(ocp.grid, ocp.data, ocp.smoothing, weighting="bogus")
    with pytest.raises(ValueError):
        RelaxedOcp(ocp.grid, ocp.data, ocp.smoothing, xi_bound=0.0)
    assert sp.issparse(ocp.state_jacobian(np.zeros(3 * ocp.m)))
