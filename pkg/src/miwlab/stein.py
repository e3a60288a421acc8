"""Stein-equation diagnostics on a region of positivity of ``f``.

For a region ``(a, b)`` and a 1-Lipschitz ``h``,

    g_h(x) = f(x)^{-1} int_a^x f(t) (h(t) - E_P[h]) dt

solves ``g' + eta g = h - E_P[h]``. The integral is evaluated in the form
``int exp(log f(t) - log f(x)) (h(t) - E_P[h]) dt`` with ``log f`` built from
``sum log|t - r_j|``. It runs from ``a`` when ``x`` is left of the mode and,
using ``int_a^b f (h - E_P[h]) = 0``, from ``b`` otherwise, so the weights never
exceed one and there is no ``0/0`` form next to a root.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .states import QUAD_TOL, EnergyState, QuadratureError, _pieces, density, log_derivative, region_masses

SERIES_RADIUS = 1e-10  # relative to region width; below this the leading series term is used
GRID_POINTS = 4096
TAIL_REACH = 40.0
FD_STEP = 1e-3


# --------------------------------------------------------------------------
# test functions: value, derivative and an antiderivative


def _logcosh(y):
    y = np.abs(y)
    return y + np.log1p(np.exp(-2.0 * y)) - math.log(2.0)


def _softplus_primitive(x):
    # int log(1 + e^t) dt = -Li2(-e^x); for x > 0 use the inversion formula
    x = np.asarray(x, dtype=float)
    neg = -special.spence(1.0 + np.exp(np.minimum(x, 0.0)))
    pos = math.pi**2 / 6 + 0.5 * x * x + special.spence(1.0 + np.exp(-np.maximum(x, 0.0)))
    return np.where(x <= 0, neg, pos)


@dataclass(frozen=True)
class LipschitzFunction:
    name: str
    h: object = field(repr=False)
    dh: object = field(repr=False)
    primitive: object = field(repr=False)
    scalar: object = field(repr=False, default=None)  # fast float -> float version of h


TANH_SCALE = 0.5

H_FAMILY = {
    "identity": LipschitzFunction("identity", lambda x: np.asarray(x, float) * 1.0, lambda x: np.ones_like(np.asarray(x, float)),
                             lambda x: 0.5 * np.square(x), float),
    "tanh": LipschitzFunction("tanh", lambda x: TANH_SCALE * np.tanh(np.asarray(x, float) / TANH_SCALE),
                         lambda x: 1.0 / np.cosh(np.asarray(x, float) / TANH_SCALE) ** 2,
                         lambda x: TANH_SCALE**2 * _logcosh(np.asarray(x, float) / TANH_SCALE),
                         lambda t: TANH_SCALE * math.tanh(t / TANH_SCALE)),
    "softplus": LipschitzFunction("softplus", lambda x: np.logaddexp(0.0, x), lambda x: special.expit(x), _softplus_primitive,
                             lambda t: math.log1p(math.exp(-abs(t))) + max(t, 0.0)),
    "sin": LipschitzFunction("sin", np.sin, np.cos, lambda x: -np.cos(x), math.sin),
}


def resolve_h(h) -> LipschitzFunction:
    if isinstance(h, LipschitzFunction):
        return h
    try:
        return H_FAMILY[h]
    except KeyError:
        raise ValueError(f"unknown test function {h!r}; choose from {sorted(H_FAMILY)}") from None


# --------------------------------------------------------------------------
# probes


@dataclass(frozen=True)
class SteinProbe:
    state: EnergyState
    k: int
    region: tuple[float, float]
    h: LipschitzFunction
    E_P_h: float
    mode: float
    samples: np.ndarray = field(repr=False)  # columns x, g, g', g'', residual

    @property
    def width(self) -> float:
        a, b = self.region
        return b - a if math.isfinite(b - a) else 1.0

    def g(self, x):
        return _vectorize(lambda t: _gh(self, t), x)

    def gpp(self, x):
        """``g''`` from the split ``2 eta^2 g - (f''/f) g - eta (h - E_P h) + h'``."""
        x = np.asarray(x, dtype=float)
        g = self.g(x)
        e, de, _ = log_derivative(self.state, x)
        # f''/f = eta' + eta^2
        return 2 * e * e * g - (de + e * e) * g - e * (self.h.h(x) - self.E_P_h) + self.h.dh(x)

    def gp_fd(self, x):
        """``g'`` by Richardson-extrapolated central differences (independent of the Stein equation)."""
        return _vectorize(lambda t: _gp_fd(self, t), x)

    def residual(self, x):
        x = np.asarray(x, dtype=float)
        e, _, _ = log_derivative(self.state, x)
        return self.gp_fd(x) + e * self.g(x) - (self.h.h(x) - self.E_P_h)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "g", "gp", "gpp", "residual"])
        for row in self.samples:
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def _vectorize(fn, x):
    arr = np.asarray(x, dtype=float)
    out = np.array([fn(float(t)) for t in arr.ravel()]).reshape(arr.shape)
    return float(out) if arr.ndim == 0 else out


def _region_mode(state: EnergyState, a: float, b: float) -> float:
    """Zero of the decreasing ``eta`` inside ``(a, b)``."""
    lo = a if math.isfinite(a) else min(b, 0.0) - 50.0
    hi = b if math.isfinite(b) else max(a, 0.0) + 50.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if log_derivative(state, mid)[0] > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _gh(probe: SteinProbe, x: float) -> float:
    a, b = probe.region
    if not a < x < b:
        raise ValueError(f"x={x} lies outside the region ({a}, {b})")
    Eh, roots = probe.E_P_h, probe.state.roots
    h = probe.h.scalar or (lambda t: float(probe.h.h(t)))
    radius = SERIES_RADIUS * probe.width
    if x - a < radius:
        return (x - a) * (h(x) - Eh) / 3.0
    if b - x < radius:
        return (x - b) * (h(x) - Eh) / 3.0
    log_fx = -0.5 * x * x + 2.0 * sum(math.log(abs(x - r)) for r in roots)
    log, exp = math.log, math.exp

    def integrand(t):
        lf = -0.5 * t * t
        for r in roots:
            lf += 2.0 * log(abs(t - r))
        return exp(lf - log_fx) * (h(t) - Eh)

    if x <= probe.mode:
        lo, sign = max(a, x - TAIL_REACH), 1.0
        lo_, hi_ = lo, x
    else:
        hi = min(b, x + TAIL_REACH)
        lo_, hi_, sign = x, hi, -1.0
    total = 0.0
    cuts = [lo_, hi_] if not (lo_ < 0.0 < hi_) else [lo_, 0.0, hi_]
    err = 0.0
    with warnings.catch_warnings():
        # roundoff warnings are judged by the returned error estimate instead
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for u, v in zip(cuts[:-1], cuts[1:]):
            val, e = integrate.quad(integrand, u, v, epsabs=1e-16, epsrel=1e-13, limit=200)
            total, err = total + val, err + e
    if err > QUAD_TOL * max(1.0, abs(total)):
        raise QuadratureError(f"g_h quadrature at x={x} did not converge", err)
    return sign * total


def _gp_fd(probe: SteinProbe, x: float) -> float:
    a, b = probe.region
    dist = min(x - a, b - x)
    s = min(FD_STEP * probe.width, 0.2 * dist)
    g = probe.g

    def central(step):
        return (g(x + step) - g(x - step)) / (2.0 * step)

    return (4.0 * central(0.5 * s) - central(s)) / 3.0


def region_expectation(state: EnergyState, k: int, fn) -> float:
    """``E_P[fn]`` for ``P`` = ``f`` conditioned on region ``k``."""
    a, b = state.regions[k]
    total = 0.0
    for lo, hi in _pieces(a, b, state.roots):
        val, _ = integrate.quad(lambda t: density(state, t) * float(fn(t)), lo, hi, epsabs=1e-15, epsrel=1e-13, limit=200)
        total += val
    return total / region_masses(state)[k].mass


def default_grid(state: EnergyState, k: int, n: int = 201) -> np.ndarray:
    a, b = state.regions[k]
    lo = a if math.isfinite(a) else (b if math.isfinite(b) else 0.0) - 6.0
    hi = b if math.isfinite(b) else (a if math.isfinite(a) else 0.0) + 6.0
    return np.linspace(lo, hi, n + 2)[1:-1]


def build_gh(state: EnergyState, k: int, h="identity", grid=None) -> SteinProbe:
    """Probe for region ``k`` and test function ``h`` with samples on ``grid``."""
    if not 0 <= k <= state.ell:
        raise ValueError(f"region index {k} out of range for order {state.ell}")
    tf = resolve_h(h)
    a, b = state.regions[k]
    Eh = region_expectation(state, k, tf.h)
    probe = SteinProbe(state=state, k=k, region=(a, b), h=tf, E_P_h=Eh, mode=_region_mode(state, a, b),
                       samples=np.empty((0, 5)))
    xs = default_grid(state, k) if grid is None else np.asarray(grid, dtype=float)
    if len(xs):
        g = probe.g(xs)
        gp = probe.gp_fd(xs)
        gpp = probe.gpp(xs)
        e, _, _ = log_derivative(state, xs)
        res = gp + e * g - (tf.h(xs) - Eh)
        object.__setattr__(probe, "samples", np.column_stack([xs, g, gp, gpp, res]))
    return probe


def series_ratio(probe: SteinProbe, x: float, side: str = "left") -> float:
    """``g_h(x) / ((x - r)(h(r) - E_P[h]))`` at the left (or right) root ``r``; tends to 1/3."""
    r = probe.region[0] if side == "left" else probe.region[1]
    if not math.isfinite(r):
        raise ValueError("region has no finite root on that side")
    return float(probe.g(x) / ((x - r) * (float(probe.h.h(r)) - probe.E_P_h)))


def tail_value(probe: SteinProbe, x: float) -> float:
    """``x^2 g_h(x) + x (h(x) - E_P[h])``, bounded as ``x`` grows on a ray."""
    return float(x * x * probe.g(x) + x * (float(probe.h.h(x)) - probe.E_P_h))


# --------------------------------------------------------------------------
# boundary terms and the bound


def _part(probe: SteinProbe, points) -> np.ndarray:
    y = np.asarray(points, dtype=float)
    a, b = probe.region
    y = y[(y > a) & (y < b)]
    if len(y) < 2:
        raise ValueError("need at least two sequence points inside the region")
    return y


def boundary_terms(probe: SteinProbe, points) -> dict:
    y = _part(probe, points)
    g1, gN = probe.g(y[0]), probe.g(y[-1])
    e1 = log_derivative(probe.state, y[0])[0]
    eN = log_derivative(probe.state, y[-1])[0]
    out = {
        "g1_over_gap": g1 / (y[1] - y[0]),
        "gN_over_gap": gN / (y[-1] - y[-2]),
        "eta_g1": e1 * g1,
        "eta_gN": eN * gN,
    }
    a = probe.region[0]
    if math.isfinite(a):
        mean = region_masses(probe.state)[probe.k].conditional_mean
        out["eta_g1_ratio"] = abs(out["eta_g1"]) / (2.0 / 3.0 * (mean - a))
        out["g1_over_gap_ratio"] = abs(out["g1_over_gap"]) / (5.0 / 3.0 * (mean - a))
    return out


def intermediate_expectation(fn_primitive, points) -> float:
    """``E_R[h] = sum_n (H(x_{n+1}) - H(x_n)) / ((N - 1)(x_{n+1} - x_n))`` for a primitive ``H`` of ``h``."""
    y = np.asarray(points, dtype=float)
    H = fn_primitive(y)
    return float(np.sum(np.diff(H) / np.diff(y)) / (len(y) - 1))


def stein_bound(probe: SteinProbe, points, beta, grid_points: int = GRID_POINTS):
    """``(bound, actual)`` with ``actual = |E_R[h] - E_P[h]|`` for the part of ``points`` in the region.

    ``beta`` may be a sequence, in which case a list of pairs is returned and
    the grid maximum of ``|g''|`` is computed once.
    """
    betas = [beta] if np.ndim(beta) == 0 else list(beta)
    if any(not 0.0 <= b <= 1.0 for b in betas):
        raise ValueError("beta must lie in [0, 1]")
    y = _part(probe, points)
    N = len(y)
    t = boundary_terms(probe, y)
    grid = np.linspace(y[0], y[-1], grid_points)
    sup_gpp = float(np.max(np.abs(probe.gpp(grid))))
    actual = abs(intermediate_expectation(probe.h.primitive, y) - probe.E_P_h)
    out = []
    for b in betas:
        edge = t["gN_over_gap"] - t["g1_over_gap"] + b * t["eta_gN"] + (1.0 - b) * t["eta_g1"]
        bound = (abs(edge) + (y[-1] - y[0]) * (1.0 + sup_gpp)) / (N - 1)
        out.append((float(bound), float(actual)))
    return out[0] if np.ndim(beta) == 0 else out
