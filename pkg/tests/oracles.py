"""Independent reference computations used by the tests.

Nothing here imports the numerical core of miwlab: Hermite values come from
numpy's HermiteE basis, probabilities from adaptive quadrature, and
transport distances from brute-force integration.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial import hermite_e as He
from scipy import integrate, optimize


def hermite(ell: int, x):
    c = np.zeros(ell + 1)
    c[-1] = 1.0
    return He.hermeval(np.asarray(x, dtype=float), c)


def hermite_roots(ell: int) -> np.ndarray:
    c = np.zeros(ell + 1)
    c[-1] = 1.0
    return np.sort(He.hermeroots(c).real) if ell else np.array([])


def norm_const(ell: int) -> float:
    # int He_l^2 exp(-x^2/2) = l! sqrt(2 pi)
    return 1.0 / (math.factorial(ell) * math.sqrt(2 * math.pi))


def density(ell: int, x):
    x = np.asarray(x, dtype=float)
    return norm_const(ell) * hermite(ell, x) ** 2 * np.exp(-x * x / 2)


def cdf(ell: int, x: float) -> float:
    edges = [-np.inf, *[r for r in hermite_roots(ell) if r < x], x]
    return float(sum(integrate.quad(lambda t: density(ell, t), a, b, epsabs=1e-14, epsrel=1e-12, limit=400)[0]
                     for a, b in zip(edges[:-1], edges[1:])))


def region_masses(ell: int) -> np.ndarray:
    edges = [-np.inf, *hermite_roots(ell), np.inf]
    return np.array([integrate.quad(lambda t: density(ell, t), a, b, epsabs=1e-14, epsrel=1e-12)[0]
                     for a, b in zip(edges[:-1], edges[1:])])


def _cell_integrals(ell, grid):
    # 10-point Gauss-Legendre on every cell of a fine grid
    u, w = np.polynomial.legendre.leggauss(10)
    a, b = grid[:-1], grid[1:]
    mid, half = (a + b) / 2, (b - a) / 2
    t = mid[:, None] + half[:, None] * u
    return half * (density(ell, t) @ w)


def w1_grid(ell: int, points, lo: float | None = None, hi: float | None = None, n: int = 1_000_000) -> float:
    """``int |F_Q - F_P|`` by the trapezoid rule on a fine grid that contains every point.

    With ``lo``/``hi`` given, ``P`` is ``f`` conditioned on ``(lo, hi)``.
    """
    y = np.sort(np.asarray(points, dtype=float))
    a = -12.0 if lo is None or not math.isfinite(lo) else lo
    b = 12.0 if hi is None or not math.isfinite(hi) else hi
    grid = np.union1d(np.linspace(a, b, n), y)
    F = np.concatenate([[0.0], np.cumsum(_cell_integrals(ell, grid))])
    F /= F[-1]
    # F_Q is constant on every cell because each point is a grid node
    Fq = np.searchsorted(y, grid[:-1], side="right") / len(y)
    return float(np.sum(np.diff(grid) * np.abs(0.5 * (F[:-1] + F[1:]) - Fq)))


def w1_quad(ell: int, points) -> float:
    """``int |F_Q - F_P|`` with every gap integrated by adaptive quadrature (small N only)."""
    y = np.sort(np.asarray(points, dtype=float))
    N = len(y)
    roots = hermite_roots(ell)
    F = np.vectorize(lambda s: cdf(ell, s))
    edges = [-30.0, *y, 30.0]
    total = 0.0
    for i, (u, v) in enumerate(zip(edges[:-1], edges[1:])):
        brk = [r for r in roots if u < r < v]
        val, _ = integrate.quad(lambda s: abs(F(s) - i / N), u, v, points=brk or None, epsabs=1e-13, epsrel=1e-11, limit=200)
        total += val
    return total


def miw_residuals(ell: int, x) -> np.ndarray:
    """Recursion and boundary residuals with the log derivative from numpy's Hermite basis."""
    x = np.asarray(x, dtype=float)
    c = np.zeros(ell + 1)
    c[-1] = 1.0
    dc = He.hermeder(c)
    eta = -x + 2 * He.hermeval(x, dc) / He.hermeval(x, c) if ell else -x
    z = np.zeros(len(x) + 1)
    z[1:-1] = 1.0 / np.diff(x)
    return np.diff(z) - eta


def miw_newton(ell: int, counts) -> np.ndarray:
    """Solve the recursion system from normal-quantile-like starting points with a generic root finder."""
    roots = hermite_roots(ell)
    edges = [-np.inf, *roots, np.inf]
    x0 = []
    for k, m in enumerate(counts):
        lo, hi = edges[k], edges[k + 1]
        lo = lo if math.isfinite(lo) else (hi if math.isfinite(hi) else 0.0) - 2.5 - 0.3 * math.log(m + 1)
        hi = hi if math.isfinite(hi) else (lo if math.isfinite(edges[k]) else 0.0) + 2.5 + 0.3 * math.log(m + 1)
        if not math.isfinite(edges[k]) and not math.isfinite(edges[k + 1]):
            lo, hi = -2.0 - 0.3 * math.log(m + 1), 2.0 + 0.3 * math.log(m + 1)
        x0.extend(lo + (hi - lo) * (np.arange(1, m + 1) - 0.5) / m)
    sol = optimize.root(lambda v: miw_residuals(ell, v), np.array(x0), method="hybr", options={"xtol": 1e-13})
    if np.max(np.abs(miw_residuals(ell, sol.x))) > 1e-9:
        raise RuntimeError(sol.message)
    return sol.x


def energy(x) -> float:
    x = np.asarray(x, dtype=float)
    z = [0.0] + [1.0 / (x[i] - x[i - 1]) for i in range(1, len(x))] + [0.0]
    return float(sum(v * v for v in x) + sum((z[i + 1] - z[i]) ** 2 for i in range(len(x))))


def fd_gradient(x, h: float = 1e-5) -> np.ndarray:
    """Fourth-order central differences of the plain-loop energy."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for n in range(len(x)):
        e = np.zeros_like(x)
        e[n] = h
        out[n] = (-energy(x + 2 * e) + 8 * energy(x + e) - 8 * energy(x - e) + energy(x - 2 * e)) / (12 * h)
    return out


def w1_intermediate(ell: int, points, lo: float, hi: float) -> float:
    """``int |F_R - F_P|`` for the piecewise-uniform ``R`` on ``points`` and ``P`` conditioned on ``(lo, hi)``."""
    y = np.sort(np.asarray(points, dtype=float))
    a = -12.0 if not math.isfinite(lo) else lo
    b = 12.0 if not math.isfinite(hi) else hi
    grid = np.union1d(np.linspace(a, b, 400_001), y)
    F = np.concatenate([[0.0], np.cumsum(_cell_integrals(ell, grid))])
    F /= F[-1]
    FR = np.interp(grid, y, np.linspace(0.0, 1.0, len(y)), left=0.0, right=1.0)
    return float(np.trapezoid(np.abs(F - FR), grid))


def w1_empirical_intermediate(points) -> float:
    """``int |F_Q - F_R|`` between the empirical measure and the piecewise-uniform ``R``, cell by cell."""
    y = np.sort(np.asarray(points, dtype=float))
    N = len(y)
    total = 0.0
    for n in range(N - 1):
        # on (y_n, y_{n+1}) F_Q = (n+1)/N and F_R rises linearly from n/(N-1) to (n+1)/(N-1)
        g = lambda s, n=n: abs((n + 1) / N - (n + (s - y[n]) / (y[n + 1] - y[n])) / (N - 1))  # noqa: E731
        total += integrate.quad(g, y[n], y[n + 1], epsabs=1e-15, limit=100)[0]
    return total
