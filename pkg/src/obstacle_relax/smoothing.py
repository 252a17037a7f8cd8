"""Smoothing families for the relaxed complementarity constraint.

Each family maps [0, inf) into [0, 1), is concave and nondecreasing with
theta(0) = 0, and tends to 1 pointwise on (0, inf) as alpha -> 0.  The
complementarity y - psi >= 0, xi >= 0, (y - psi) xi = 0 is relaxed to

    theta(y - psi) + theta(xi) <= 1.

All functions accept scalars or arrays and evaluate elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("frac", "exp", "log")
_ALIASES = {
    "frac": "frac",
    "fractional": "frac",
    "exp": "exp",
    "exponential": "exp",
    "log": "log",
    "logarithmic": "log",
}


class DomainError(ValueError):
    """Argument outside the domain where a smoothing expression is defined."""


@dataclass(frozen=True)
class SmoothingFn:
    kind: str
    alpha: float

    def __post_init__(self):
        kind = _ALIASES.get(self.kind)
        if kind is None:
            raise ValueError(f"unknown smoothing kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha!r}")
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def scale(self) -> float:
        """Factor in front of the logarithmically scaled constraint."""
        return self.alpha**2 if self.kind == "frac" else self.alpha


def _nonneg(x, what="argument"):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise DomainError(f"{what} must be nonnegative")
    return x


def _out(x, value):
    return float(value) if np.ndim(x) == 0 else value


def complement(fn: SmoothingFn, x):
    """1 - theta(x), evaluated without cancellation."""
    x = _nonneg(x)
    a = fn.alpha
    if fn.kind == "frac":
        val = a / (x + a)
    elif fn.kind == "exp":
        val = np.exp(-x / a)
    else:
        val = np.log1p(a / (1.0 + x)) / np.log1p(x + a)
    return _out(x, val)


def theta(fn: SmoothingFn, x):
    x = _nonneg(x)
    a = fn.alpha
    if fn.kind == "frac":
        val = x / (x + a)
    elif fn.kind == "exp":
        val = -np.expm1(-x / a)
    else:
        val = np.log1p(x) / np.log1p(x + a)
    return _out(x, val)


def theta_deriv(fn: SmoothingFn, x):
    x = _nonneg(x)
    a = fn.alpha
    if fn.kind == "frac":
        val = a / (x + a) ** 2
    elif fn.kind == "exp":
        val = np.exp(-x / a) / a
    else:
        l1, l2 = np.log1p(x), np.log1p(x + a)
        val = (l2 / (1.0 + x) - l1 / (1.0 + x + a)) / l2**2
    return _out(x, val)


def theta_deriv2(fn: SmoothingFn, x):
    x = _nonneg(x)
    a = fn.alpha
    if fn.kind == "frac":
        val = -2.0 * a / (x + a) ** 3
    elif fn.kind == "exp":
        val = -np.exp(-x / a) / a**2
    else:
        l1, l2 = np.log1p(x), np.log1p(x + a)
        d1, d2 = 1.0 / (1.0 + x), 1.0 / (1.0 + x + a)
        num = d1 * l2 - l1 * d2
        val = (-(d1**2) * l2 + l1 * d2**2) / l2**2 - 2.0 * d2 * num / l2**3
    return _out(x, val)


def relaxed_residual(fn: SmoothingFn, a, b):
    """1 - theta(a) - theta(b); the pair is feasible iff the result is >= 0."""
    a = _nonneg(a, "a")
    b = _nonneg(b, "b")
    return complement(fn, a) + complement(fn, b) - 1.0


def scaled_residual(fn: SmoothingFn, a, b):
    """Logarithmically scaled relaxed constraint, s * ln(2 - theta(a) - theta(b)).

    s = alpha^2 for the fractional family (giving
    alpha^2 ln(alpha/(a+alpha) + alpha/(b+alpha))) and s = alpha otherwise.
    Same feasibility sign as :func:`relaxed_residual`.
    """
    u = np.asarray(complement(fn, _nonneg(a, "a")) + complement(fn, _nonneg(b, "b")))
    if np.any(u <= 0):
        raise DomainError("log argument of the scaled constraint is not positive")
    return _out(u, fn.scale * np.log(u))


def scaled_residual_derivs(fn: SmoothingFn, a, b):
    """Value, gradient and Hessian entries of :func:`scaled_residual`.

    Returns (c, c_a, c_b, c_aa, c_ab, c_bb) as arrays.
    """
    a = np.atleast_1d(_nonneg(a, "a"))
    b = np.atleast_1d(_nonneg(b, "b"))
    u = complement(fn, a) + complement(fn, b)
    if np.any(u <= 0):
        raise DomainError("log argument of the scaled constraint is not positive")
    s = fn.scale
    ta, tb = theta_deriv(fn, a), theta_deriv(fn, b)
    taa, tbb = theta_deriv2(fn, a), theta_deriv2(fn, b)
    c = s * np.log(u)
    c_a = -s * ta / u
    c_b = -s * tb / u
    c_aa = -s * (taa / u + ta**2 / u**2)
    c_bb = -s * (tbb / u + tb**2 / u**2)
    c_ab = -s * ta * tb / u**2
    return c, c_a, c_b, c_aa, c_ab, c_bb


def lemma32_product_bound(alpha: float, a, b):
    """Whether a*b <= alpha^2, the closed form of fractional feasibility."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    res = a * b <= alpha * alpha
    return bool(res) if res.ndim == 0 else res
