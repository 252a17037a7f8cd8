"""Finite-difference discretization of the unit square.

Unknowns live on the (n-1)^2 interior nodes of a uniform grid with mesh
width h = 1/n; homogeneous Dirichlet values on the boundary are eliminated.
Field vectors are plain float arrays ordered with x1 varying fastest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

WEIGHTINGS = ("node-sum", "cell")


@dataclass(frozen=True)
class Grid:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"grid needs n >= 2 subdivisions, got {self.n!r}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def side(self) -> int:
        """Interior nodes per direction."""
        return self.n - 1

    @property
    def interior_count(self) -> int:
        return (self.n - 1) ** 2

    def flat_index(self, i: int, j: int) -> int:
        """Flat index of interior node (i, j), 1 <= i, j <= n-1."""
        if not (1 <= i <= self.n - 1 and 1 <= j <= self.n - 1):
            raise IndexError(f"({i}, {j}) is not an interior node")
        return (j - 1) * (self.n - 1) + (i - 1)

    def node_of(self, k: int) -> tuple[int, int]:
        if not 0 <= k < self.interior_count:
            raise IndexError(k)
        j, i = divmod(k, self.n - 1)
        return i + 1, j + 1

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """(x1, x2) coordinates of the interior nodes in flat order."""
        t = np.arange(1, self.n) / self.n
        x1, x2 = np.meshgrid(t, t, indexing="xy")
        return x1.ravel(), x2.ravel()

    def weight(self, weighting: str) -> float:
        if weighting == "node-sum":
            return 1.0
        if weighting == "cell":
            return self.h * self.h
        raise ValueError(f"unknown weighting {weighting!r}; expected one of {WEIGHTINGS}")

    def zeros(self) -> np.ndarray:
        return np.zeros(self.interior_count)


def build_grid(n: int) -> Grid:
    return Grid(n)


def _lap1d(k: int) -> sp.csr_matrix:
    e = np.ones(k)
    return sp.diags([-e[1:], 2 * e, -e[1:]], [-1, 0, 1], format="csr")


def assemble_laplacian(grid: Grid) -> sp.csr_matrix:
    """Negative 5-point Laplacian on interior nodes, scaled by 1/h^2.

    Diagonal 4/h^2, off-diagonals -1/h^2 toward interior neighbours.
    """
    k = grid.side
    eye = sp.identity(k, format="csr")
    t = _lap1d(k)
    a = sp.kron(eye, t) + sp.kron(t, eye)
    # n*n is exact in floating point, 1/h**2 is not
    a = (a * float(grid.n * grid.n)).tocsr()
    a.eliminate_zeros()
    return a


def check_field(grid: Grid, u: np.ndarray, name: str = "field") -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.interior_count,):
        raise ValueError(
            f"{name} has shape {u.shape}, grid n={grid.n} needs ({grid.interior_count},)"
        )
    return u


def inner(grid: Grid, u: np.ndarray, w: np.ndarray, weighting: str = "node-sum") -> float:
    """Discrete L2 product: plain node sum, or h^2-weighted cell quadrature."""
    u = check_field(grid, u, "u")
    w = check_field(grid, w, "w")
    return grid.weight(weighting) * float(np.dot(u, w))


@dataclass(frozen=True)
class Nonlinearity:
    """Monotone C^1 (here C^2) state nonlinearity g with its derivatives."""

    name: str
    g: Callable[[np.ndarray], np.ndarray]
    dg: Callable[[np.ndarray], np.ndarray]
    d2g: Callable[[np.ndarray], np.ndarray]


CUBIC = Nonlinearity(
    "cubic",
    g=lambda y: y**3,
    dg=lambda y: 3.0 * y**2,
    d2g=lambda y: 6.0 * y,
)


def linear(c0: float) -> Nonlinearity:
    if c0 < 0:
        raise ValueError("g must be nondecreasing")
    return Nonlinearity(
        f"linear({c0:g})",
        g=lambda y: c0 * y,
        dg=lambda y: np.full_like(np.asarray(y, dtype=float), c0),
        d2g=lambda y: np.zeros_like(np.asarray(y, dtype=float)),
    )


@dataclass(frozen=True)
class ProblemData:
    f: np.ndarray
    psi: np.ndarray
    z_d: np.ndarray
    v_d: np.ndarray
    nu: float = 0.1
    g: Nonlinearity = field(default=CUBIC)

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        for name in ("f", "psi", "z_d", "v_d"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)


def example71_f(x1, x2):
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    left = 200.0 * (2.0 * x1 * (x1 - 0.5) ** 2 - x2 * (1.0 - x2) * (6.0 * x1 - 2.0))
    right = 200.0 * (0.5 - x1)
    return np.where(x1 <= 0.5, left, right)


def example71_psi(x1, x2):
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    bump = x2 * (x1 - 0.5) ** 2 * (1.0 - x2)
    return np.where(x1 <= 0.5, 200.0 * x1 * bump, 200.0 * (x1 - 1.0) * bump)


def example71_data(grid: Grid) -> ProblemData:
    """Benchmark data: piecewise f and psi, z_d = 1, v_d = 0, nu = 0.1, g(y) = y^3."""
    x1, x2 = grid.coordinates()
    m = grid.interior_count
    return ProblemData(
        f=example71_f(x1, x2),
        psi=example71_psi(x1, x2),
        z_d=np.ones(m),
        v_d=np.zeros(m),
        nu=0.1,
        g=CUBIC,
    )


def grid_dump(grid: Grid, **fields: np.ndarray) -> str:
    """Whitespace table of node coordinates and field values, boundary included.

    Boundary rows carry 0 for every field (homogeneous Dirichlet).
    """
    names = list(fields)
    full = {}
    for name, u in fields.items():
        u = check_field(grid, u, name)
        g = np.zeros((grid.n + 1, grid.n + 1))
        g[1:-1, 1:-1] = u.reshape(grid.side, grid.side)
        full[name] = g
    lines = ["# x1 x2 " + " ".join(names)]
    for j in range(grid.n + 1):
        for i in range(grid.n + 1):
            vals = " ".join(f"{full[name][j, i]:.10e}" for name in names)
            lines.append(f"{i * grid.h:.6f} {j * grid.h:.6f} {vals}")
    return "\n".join(lines) + "\n"
