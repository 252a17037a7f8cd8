import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from obstacle_relax import assemble_laplacian, build_grid, example71_data, grid_dump, inner
from obstacle_relax.grid import example71_f, example71_psi, linear


@pytest.mark.parametrize("n, count, h", [(2, 1, 0.5), (20, 361, 0.05), (15, 196, 1 / 15)])
def test_build_grid_counts(n, count, h):
    g = build_grid(n)
    assert g.interior_count == count
    assert g.h == pytest.approx(h, rel=1e-15)
    assert g.h * g.n == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("n", [1, 0, -3, 2.5])
def test_build_grid_rejects_small_n(n):
    with pytest.raises(ValueError):
        build_grid(n)


def test_laplacian_n3_entries():
    A = assemble_laplacian(build_grid(3)).toarray()
    expected = np.array([[36, -9, -9, 0], [-9, 36, 0, -9], [-9, 0, 36, -9], [0, -9, -9, 36]], float)
    np.testing.assert_allclose(A, expected, rtol=1e-14)


def _boundary_lift(g, fun):
    """Contribution of nonzero Dirichlet values of ``fun`` to the stencil rows."""
    lift = g.zeros()
    for k in range(g.interior_count):
        i, j = g.node_of(k)
        for a, b in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
            if a in (0, g.n) or b in (0, g.n):
                lift[k] += fun(a * g.h, b * g.h) * g.n * g.n
    return lift


@pytest.mark.parametrize("n", [3, 7, 20])
def test_laplacian_exact_on_quadratic(n):
    g = build_grid(n)
    x1, x2 = g.coordinates()
    A = assemble_laplacian(g)
    for fun, value in ((lambda a, b: a * (1 - a), 2.0), (lambda a, b: b * (1 - b), 2.0), (lambda a, b: a * a + 3 * b, -2.0)):
        np.testing.assert_allclose(A @ fun(x1, x2) - _boundary_lift(g, fun), value, atol=1e-8)
    assert np.all(A @ g.zeros() == 0)


@given(st.integers(min_value=2, max_value=14))
@settings(max_examples=15, deadline=None)
def test_laplacian_structure(n):
    g = build_grid(n)
    A = assemble_laplacian(g)
    assert (A - A.T).nnz == 0
    assert np.allclose(A.diagonal(), 4 * n * n)
    # row sums are >= 0 and vanish only away from the boundary
    rows = np.asarray(A.sum(axis=1)).ravel()
    for k in range(g.interior_count):
        i, j = g.node_of(k)
        assert g.flat_index(i, j) == k
        boundary_neighbours = sum(t in (0, n) for t in (i - 1, i + 1, j - 1, j + 1))
        assert rows[k] == pytest.approx(boundary_neighbours * n * n)
        assert A[k].nnz == 5 - boundary_neighbours
    np.linalg.cholesky(A.toarray())


@given(st.integers(min_value=3, max_value=10), st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_discrete_maximum_principle(n, seed):
    # nonnegative right-hand side gives a nonnegative solution
    g = build_grid(n)
    rhs = np.random.default_rng(seed).uniform(0, 1, g.interior_count)
    y = np.linalg.solve(assemble_laplacian(g).toarray(), rhs)
    assert np.all(y >= -1e-14)


def test_example_data_values():
    assert float(example71_f(0.75, 0.5)) == -50.0
    assert float(example71_psi(0.25, 0.5)) == pytest.approx(0.78125, rel=1e-15)
    for x1 in np.linspace(0, 1, 11):
        assert example71_psi(x1, 0.0) == 0.0 and example71_psi(x1, 1.0) == 0.0
    assert example71_psi(0.0, 0.3) == 0.0 and example71_psi(1.0, 0.3) == 0.0


def test_example_data_on_grid():
    g = build_grid(4)
    d = example71_data(g)
    k = g.flat_index(3, 2)  # (0.75, 0.5)
    assert d.f[k] == -50.0
    assert d.psi[g.flat_index(1, 2)] == pytest.approx(0.78125)
    assert d.nu == 0.1 and np.all(d.z_d == 1) and np.all(d.v_d == 0)
    assert d.g.g(np.array([2.0]))[0] == 8.0


def test_inner_weightings():
    g = build_grid(20)
    one = np.ones(g.interior_count)
    assert inner(g, one, one, "node-sum") == 361
    assert inner(g, one, one, "cell") == pytest.approx(0.9025, rel=1e-14)
    assert inner(g, g.zeros(), one, "cell") == 0.0
    with pytest.raises(ValueError):
        inner(g, one, np.ones(10))
    with pytest.raises(ValueError):
        inner(g, one, one, "trapezoid")


def test_flat_index_bounds():
    g = build_grid(4)
    with pytest.raises(IndexError):
        g.flat_index(0, 1)
    with pytest.raises(IndexError):
        g.node_of(9)


def test_linear_nonlinearity_rejects_decreasing():
    with pytest.raises(ValueError):
        linear(-1.0)


def test_grid_dump_includes_boundary():
    g = build_grid(3)
    text = grid_dump(g, u=np.arange(4.0))
    rows = [ln.split() for ln in text.splitlines() if ln and not ln.startswith("#")]
    assert len(rows) == 16
    values = {(round(float(r[0]) * 3), round(float(r[1]) * 3)): float(r[2]) for r in rows}
    for (i, j), val in values.items():
        if i in (0, 3) or j in (0, 3):
            assert val == 0.0
        else:
            assert val == g.flat_index(i, j)
