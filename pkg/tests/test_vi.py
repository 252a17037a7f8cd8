import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from obstacle_relax import ProblemData, build_grid, brute_force_active_set, example71_data, solve_vi
from obstacle_relax.grid import assemble_laplacian


def _random_data(grid, rng, psi_scale=0.3, f_scale=10.0):
    m = grid.interior_count
    return ProblemData(f=rng.normal(0.0, f_scale, m), psi=rng.normal(0.0, psi_scale, m),
                       z_d=np.ones(m), v_d=np.zeros(m))


def _single_node(rhs):
    g = build_grid(2)
    data = ProblemData(f=np.array([rhs]), psi=np.zeros(1), z_d=np.ones(1), v_d=np.zeros(1))
    return g, data


def test_single_node_inactive():
    g, data = _single_node(5.0)
    y_exact = brentq(lambda t: t**3 + 16 * t - 5.0, 0.0, 1.0, xtol=1e-15)
    for sol in (solve_vi(g, data, g.zeros()), brute_force_active_set(g, data, g.zeros())):
        assert sol.y[0] == pytest.approx(y_exact, abs=1e-12)
        assert sol.xi[0] == 0.0


def test_single_node_active():
    g, data = _single_node(-5.0)
    for sol in (solve_vi(g, data, g.zeros()), brute_force_active_set(g, data, g.zeros())):
        assert sol.y[0] == 0.0
        assert sol.xi[0] == pytest.approx(5.0, abs=1e-12)


def test_low_obstacle_gives_plain_state_equation(rng):
    g = build_grid(6)
    m = g.interior_count
    data = ProblemData(f=rng.normal(0, 5, m), psi=np.full(m, -1e3), z_d=np.ones(m), v_d=np.zeros(m))
    v = rng.normal(0, 1, m)
    sol = solve_vi(g, data, v)
    A = assemble_laplacian(g)
    np.testing.assert_allclose(A @ sol.y + sol.y**3, data.f + v, atol=1e-9)
    assert np.all(sol.xi == 0)


@pytest.mark.parametrize("n", [2, 3, 4])
@pytest.mark.parametrize("seed", range(8))
def test_matches_enumeration(n, seed):
    rng = np.random.default_rng(seed)
    g = build_grid(n)
    data = _random_data(g, rng)
    v = rng.normal(0, 5, g.interior_count)
    ref = brute_force_active_set(g, data, v)
    sol = solve_vi(g, data, v)
    assert sol.converged
    assert np.max(np.abs(sol.y - ref.y)) <= 1e-8
    assert np.max(np.abs(sol.xi - ref.xi)) <= 1e-7


def test_solution_satisfies_complementarity(rng):
    g = build_grid(12)
    data = example71_data(g)
    v = rng.normal(0, 20, g.interior_count)
    sol = solve_vi(g, data, v)
    A = assemble_laplacian(g)
    assert np.all(sol.y >= data.psi)
    assert np.all(sol.xi >= 0)
    assert np.max(np.abs((sol.y - data.psi) * sol.xi)) <= 1e-9
    np.testing.assert_allclose(A @ sol.y + sol.y**3, data.f + v + sol.xi, atol=1e-8)
    assert sol.residual_inf <= 1e-10


def test_example_without_control_sits_on_obstacle(ex20):
    g, data = ex20
    sol = solve_vi(g, data, g.zeros())
    np.testing.assert_allclose(sol.y, data.psi, atol=1e-12)


def test_independent_of_initial_guess(rng):
    g = build_grid(8)
    data = _random_data(g, rng)
    v = rng.normal(0, 5, g.interior_count)
    ys = [solve_vi(g, data, v, y0=rng.normal(0, 3, g.interior_count)).y for _ in range(10)]
    for y in ys[1:]:
        assert np.max(np.abs(y - ys[0])) <= 1e-9


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_monotone_in_control(seed):
    rng = np.random.default_rng(seed)
    g = build_grid(5)
    data = _random_data(g, rng)
    v1 = rng.normal(0, 5, g.interior_count)
    v2 = v1 + rng.uniform(0, 5, g.interior_count)
    y1 = solve_vi(g, data, v1).y
    y2 = solve_vi(g, data, v2).y
    assert np.all(y2 >= y1 - 1e-10)


def test_projected_gauss_seidel_fallback(rng):
    g = build_grid(5)
    data = _random_data(g, rng)
    v = rng.normal(0, 5, g.interior_count)
    ref = solve_vi(g, data, v)
    # zero Newton iterations sends everything through the fallback
    sol = solve_vi(g, data, v, max_iter=0)
    assert sol.method == "pgs" and sol.converged
    assert np.max(np.abs(sol.y - ref.y)) <= 1e-8


def test_enumeration_refuses_large_grids():
    g = build_grid(6)
    with pytest.raises(ValueError):
        brute_force_active_set(g, example71_data(g), g.zeros())


def test_input_validation():
    g = build_grid(3)
    data = example71_data(g)
    with pytest.raises(ValueError):
        solve_vi(g, data, np.zeros(3))
    with pytest.raises(ValueError):
        solve_vi(g, data, g.zeros(), tol=0.0)
