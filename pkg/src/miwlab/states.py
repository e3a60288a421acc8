"""Higher-energy states of the quantum harmonic oscillator.

The order-``ell`` state has density ``f(x) = c * p(x)**2 * exp(-x**2 / 2)``
where ``p`` is the probabilists' Hermite polynomial of degree ``ell``.
``f`` vanishes (to second order) at the ``ell`` roots of ``p`` and is strictly
positive on the ``ell + 1`` open regions between them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, special

MAX_ORDER = 20
ROOT_TOL = 1e-13
QUAD_TOL = 1e-10

SQRT_2PI = math.sqrt(2.0 * math.pi)


class PoleError(ValueError):
    """Raised when a log-derivative is requested at a root of ``f``."""


class QuadratureError(RuntimeError):
    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved error {achieved:.3e})")
        self.achieved = achieved


def _check_order(ell: int) -> int:
    if int(ell) != ell or ell < 0 or ell > MAX_ORDER:
        raise ValueError(f"order must be an integer in [0, {MAX_ORDER}], got {ell!r}")
    return int(ell)


@lru_cache(maxsize=None)
def hermite_coeffs(ell: int) -> tuple[int, ...]:
    """Exact integer monomial coefficients of ``p_ell``, lowest degree first."""
    ell = _check_order(ell)
    prev, cur = [1], [0, 1]
    if ell == 0:
        return (1,)
    for k in range(1, ell):
        # p_{k+1} = x p_k - k p_{k-1}
        nxt = [0] + cur
        for i, a in enumerate(prev):
            nxt[i] -= k * a
        prev, cur = cur, nxt
    return tuple(cur)


def hermite_eval(ell: int, x):
    """Return ``(p_ell(x), p_ell'(x))`` by the three-term recurrence.

    Works on scalars and numpy arrays.
    """
    ell = _check_order(ell)
    x = np.asarray(x, dtype=float) if not isinstance(x, float) else x
    if ell == 0:
        return 1.0 + 0.0 * x, 0.0 * x
    prev, cur = 1.0 + 0.0 * x, x
    for k in range(1, ell):
        prev, cur = cur, x * cur - k * prev
    # p_ell' = ell * p_{ell-1}
    return cur, ell * prev


def _poly_eval(coeffs, x):
    acc = 0.0 * x
    for a in reversed(coeffs):
        acc = acc * x + a
    return acc


def _poly_deriv(coeffs):
    return [k * a for k, a in enumerate(coeffs)][1:] or [0]


def hermite_second_derivative(ell: int, x):
    """``p_ell''(x)`` from differentiating the exact coefficients twice."""
    return _poly_eval(_poly_deriv(_poly_deriv(list(hermite_coeffs(ell)))), np.asarray(x, float))


@lru_cache(maxsize=None)
def hermite_roots(ell: int) -> tuple[float, ...]:
    """Sorted real roots of ``p_ell``.

    Roots of ``p_ell`` interlace those of ``p_{ell-1}``, so each root is
    bracketed by consecutive roots of the previous polynomial and found by
    bisection on the sign change.
    """
    ell = _check_order(ell)
    if ell == 0:
        return ()
    bound = math.sqrt(4.0 * ell + 2.0) + 1.0
    edges = [-bound, *hermite_roots(ell - 1), bound]
    roots = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        roots.append(_bisect_root(ell, lo, hi))
    # enforce exact symmetry; the middle root of an odd order is 0
    roots = np.array(roots)
    roots = 0.5 * (roots - roots[::-1])
    if ell % 2:
        roots[ell // 2] = 0.0
    return tuple(float(r) for r in roots)


def _bisect_root(ell: int, lo: float, hi: float) -> float:
    plo = hermite_eval(ell, lo)[0]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo <= ROOT_TOL or mid in (lo, hi):
            break
        pmid = hermite_eval(ell, mid)[0]
        if pmid == 0.0:
            return mid
        if (pmid > 0) == (plo > 0):
            lo, plo = mid, pmid
        else:
            hi = mid
    # one Newton step tightens the last few ulps
    p, dp = hermite_eval(ell, 0.5 * (lo + hi))
    r = 0.5 * (lo + hi) - p / dp
    return r if lo <= r <= hi else 0.5 * (lo + hi)


@dataclass(frozen=True)
class RegionMass:
    k: int
    mass: float
    conditional_mean: float
    conditional_abs_mean: float


@dataclass(frozen=True)
class EnergyState:
    ell: int
    coeffs: tuple[int, ...]
    roots: tuple[float, ...]
    norm_c: float
    regions: tuple[tuple[float, float], ...] = field(repr=False)

    @property
    def n_regions(self) -> int:
        return self.ell + 1

    def region_of(self, x: float) -> int:
        """Index ``k`` of the region containing ``x`` (roots count as the left region)."""
        k = 0
        for r in self.roots:
            if x > r:
                k += 1
        return k

    def to_json(self) -> dict:
        return {"ell": self.ell, "roots": list(self.roots), "norm_c": self.norm_c}


def _finite(a: float, b: float, roots) -> tuple[float, float]:
    # exp(-x^2/2) underflows far beyond this cutoff
    cut = 40.0 + (max(abs(r) for r in roots) if roots else 0.0)
    return max(a, -cut), min(b, cut)


def _pieces(a: float, b: float, roots) -> list[tuple[float, float]]:
    a, b = _finite(a, b, roots)
    cuts = [a, 0.0, b] if a < 0.0 < b else [a, b]
    return list(zip(cuts[:-1], cuts[1:]))


def _region_bounds(roots) -> tuple[tuple[float, float], ...]:
    edges = [-math.inf, *roots, math.inf]
    return tuple(zip(edges[:-1], edges[1:]))


def _integrate_regions(func, roots, tol=QUAD_TOL) -> tuple[float, float]:
    total, err = 0.0, 0.0
    for a, b in _region_bounds(roots):
        for lo, hi in _pieces(a, b, roots):
            val, e = integrate.quad(func, lo, hi, epsabs=tol * 1e-2, epsrel=1e-13, limit=200)
            total += val
            err += e
    return total, err


@lru_cache(maxsize=None)
def energy_state(ell: int) -> EnergyState:
    """Build (and cache) the order-``ell`` state; ``norm_c`` comes from quadrature."""
    ell = _check_order(ell)
    roots = hermite_roots(ell)
    unnormalized, err = _integrate_regions(
        lambda t: hermite_eval(ell, t)[0] ** 2 * math.exp(-0.5 * t * t), roots
    )
    if err > QUAD_TOL * unnormalized:
        raise QuadratureError("normalization did not converge", err)
    return EnergyState(
        ell=ell,
        coeffs=hermite_coeffs(ell),
        roots=roots,
        norm_c=1.0 / unnormalized,
        regions=_region_bounds(roots),
    )


def density(state: EnergyState, x):
    p, _ = hermite_eval(state.ell, x)
    return state.norm_c * p * p * np.exp(-0.5 * np.square(x))


def eta(state: EnergyState, x: float) -> float:
    """Scalar log-derivative ``f'/f``; hot path for the constructor."""
    s = -x
    for r in state.roots:
        s += 2.0 / (x - r)
    return s


def log_derivative(state: EnergyState, x):
    """Return ``(eta, eta', eta'')`` with ``eta = f'/f = -x + 2 * sum 1/(x - r_j)``."""
    x = np.asarray(x, dtype=float)
    d = x[..., None] - np.asarray(state.roots, dtype=float)
    if state.ell and np.any(d == 0.0):
        raise PoleError("log-derivative has a pole at a root of f")
    with np.errstate(divide="ignore"):
        inv = 1.0 / d
    eta_ = -x + 2.0 * inv.sum(axis=-1)
    deta = -1.0 - 2.0 * (inv**2).sum(axis=-1)
    d2eta = 4.0 * (inv**3).sum(axis=-1)
    if eta_.ndim == 0:
        return float(eta_), float(deta), float(d2eta)
    return eta_, deta, d2eta


def _poly_mul(a, b):
    out = [0] * (len(a) + len(b) - 1)
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            out[i + j] += ai * bj
    return out


def solve_q(p) -> list:
    """Solve ``p(x) - p(0) = (1 - x^2) q(x) + x q'(x) - q(0)`` for ``q``.

    ``p`` is given lowest degree first. Matching the coefficient of ``x^j``
    gives ``(1 + j) b_j - b_{j-2} = a_j``, solved from the top degree down.
    The ``x^1`` equation is then a consistency condition; it holds for even
    ``p`` and fails whenever ``p`` has an odd part of degree >= 3 that cannot
    be absorbed, in which case ``ValueError`` is raised. Integer input stays
    exact.
    """
    a = list(p)
    while len(a) > 1 and a[-1] == 0:
        a.pop()
    n = len(a) - 1
    if n < 2:
        raise ValueError("polynomial degree must be at least 2")
    b = [0] * (n - 1)
    for j in range(n, 1, -1):
        bj = b[j] if j <= n - 2 else 0
        b[j - 2] = (1 + j) * bj - a[j]
    b1 = b[1] if n - 2 >= 1 else 0
    if 2 * b1 != a[1] and not math.isclose(2 * b1, a[1], rel_tol=1e-12, abs_tol=1e-12):
        raise ValueError("no polynomial q satisfies the identity for this p")
    return b


@lru_cache(maxsize=None)
def _antiderivative_q(ell: int) -> tuple[tuple, int]:
    psq = _poly_mul(list(hermite_coeffs(ell)), list(hermite_coeffs(ell)))
    if ell == 0:
        return (0,), 1
    return tuple(solve_q(psq)), psq[0]


def cdf(state: EnergyState, x, method: str = "antiderivative"):
    """Distribution function ``F(x) = int_{-inf}^x f``.

    The default uses the exact antiderivative
    ``int p^2 e^{-t^2/2} = x q(x) e^{-x^2/2} - (q(0) - p(0)^2) sqrt(2 pi) Phi(x)``;
    ``method="quadrature"`` integrates ``f`` adaptively instead.
    """
    if method == "quadrature":
        return _cdf_quad(state, x)
    if method != "antiderivative":
        raise ValueError(f"unknown method {method!r}")
    q, p0 = _antiderivative_q(state.ell)
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        poly_part = np.where(np.isfinite(x), x * _poly_eval(q, x) * np.exp(-0.5 * x * x), 0.0)
    out = state.norm_c * (poly_part - (q[0] - p0) * SQRT_2PI * special.ndtr(x))
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _cdf_quad(state: EnergyState, x):
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(xs)
    for i, xi in enumerate(xs):
        edges = [r for r in state.roots if r < xi]
        pieces = [-math.inf, *edges, xi]
        total, err = 0.0, 0.0
        for a, b in zip(pieces[:-1], pieces[1:]):
            for lo, hi in _pieces(a, b, state.roots):
                if lo >= hi:
                    continue
                val, e = integrate.quad(lambda t: density(state, t), lo, hi, epsabs=1e-14, epsrel=1e-13, limit=200)
                total, err = total + val, err + e
        if err > QUAD_TOL:
            raise QuadratureError("cdf quadrature did not converge", err)
        out[i] = total
    return float(out[0]) if np.ndim(x) == 0 else out


@lru_cache(maxsize=None)
def region_masses(state: EnergyState) -> tuple[RegionMass, ...]:
    """Mass, conditional mean and conditional absolute mean of each region."""
    edges = [-math.inf, *state.roots, math.inf]
    F = cdf(state, np.array(edges))
    out = []
    for k, (a, b) in enumerate(state.regions):
        mass = float(F[k + 1] - F[k])
        m1 = m2 = e1 = e2 = 0.0
        for lo, hi in _pieces(a, b, state.roots):
            v, e = integrate.quad(lambda t: t * density(state, t), lo, hi, epsabs=1e-14, limit=200)
            m1, e1 = m1 + v, e1 + e
            v, e = integrate.quad(lambda t: abs(t) * density(state, t), lo, hi, epsabs=1e-14, limit=200)
            m2, e2 = m2 + v, e2 + e
        if max(e1, e2) > QUAD_TOL:
            raise QuadratureError("region moment quadrature did not converge", max(e1, e2))
        out.append(RegionMass(k=k, mass=mass, conditional_mean=m1 / mass, conditional_abs_mean=m2 / mass))
    return tuple(out)


@lru_cache(maxsize=None)
def _first_moment_poly(ell: int) -> tuple:
    """``A`` with ``int_{-inf}^x t p(t)^2 e^{-t^2/2} dt = A(x) e^{-x^2/2}``.

    ``t p^2`` is odd, and for odd ``k``
    ``int_{-inf}^x t^k e^{-t^2/2} = -P_k(x) e^{-x^2/2}`` with ``P_1 = 1`` and
    ``P_k = x^{k-1} + (k-1) P_{k-2}``.
    """
    s = [0] + _poly_mul(list(hermite_coeffs(ell)), list(hermite_coeffs(ell)))
    A = [0] * len(s)
    P = [1]
    for k in range(1, len(s), 2):
        if k > 1:
            P = [(k - 1) * c for c in P] + [0]
            P += [0] * (k - len(P))
            P[k - 1] += 1
        for i, c in enumerate(P):
            A[i] -= s[k] * c
    return tuple(A)


def partial_first_moment(state: EnergyState, x):
    """``M(x) = int_{-inf}^x t f(t) dt`` in closed form (``M(+inf) = 0`` by symmetry)."""
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore", over="ignore"):
        out = np.where(np.isfinite(x), state.norm_c * _poly_eval(_first_moment_poly(state.ell), x)
                       * np.exp(-0.5 * x * x), 0.0)
    return float(out) if out.ndim == 0 else out
