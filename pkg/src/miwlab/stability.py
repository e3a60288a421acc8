"""Gradient of the MIW energy and its behaviour along MIW sequences.

``H(x) = sum x_n^2 + sum_{n=1}^N (zeta_{n+1} - zeta_n)^2`` with
``zeta_n = 1/(x_n - x_{n-1})`` and ``zeta_1 = zeta_{N+1} = 0``. On an MIW
sequence ``zeta_{n+1} - zeta_n = eta(x_n)``, and the gradient component at a
fixed location ``t`` tends to ``2t - 2 eta'(t) eta(t) - 2 eta''(t)``, which
vanishes identically because ``t^2 = 2 eta' + eta^2 + 4 ell + 2``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .constructor import MIWSequence, construct
from .metrics import _checked, energy, locate, zeta
from .states import EnergyState, PoleError, energy_state, log_derivative

IDENTITY_TOL = 1e-9
FD_STEP = 1e-6
CENTER_CSV_HEADER = ["N", "x_center", "grad_center", "slope_estimate"]


def grad_H(x) -> np.ndarray:
    """Analytic gradient of ``H`` for any strictly increasing configuration."""
    x = _checked(x)
    z = zeta(x)
    T = np.diff(z)  # T[i] = zeta_{i+2} - zeta_{i+1}
    g = 2.0 * x
    if len(x) > 1:
        # dH/dzeta_m for m = 2..N, and dzeta_m/dx_m = -zeta_m^2 = -dzeta_m/dx_{m-1}
        dHdz = 2.0 * (T[:-1] - T[1:])
        w = z[1:-1] ** 2 * dHdz
        g[1:] -= w
        g[:-1] += w
    return g


def fd_grad(x, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of ``H`` with step ``h * max(1, |x_n|)``."""
    x = _checked(x)
    out = np.empty_like(x)
    for n in range(len(x)):
        step = h * max(1.0, abs(x[n]))
        xp, xm = x.copy(), x.copy()
        xp[n] += step
        xm[n] -= step
        out[n] = (energy(xp)[2] - energy(xm)[2]) / (2.0 * step)
    return out


def grad_on_miw(seq: MIWSequence, n: int, state: EnergyState | None = None) -> float:
    """``dH/dx_n`` (1-based, ``1 < n < N``) using the MIW relation.

    ``2 x_n - 2 (eta_{n+1} - eta_n)/g_+^2 + 2 (eta_n - eta_{n-1})/g_-^2``.
    """
    state = state or seq.state
    x = np.asarray(seq.points)
    if not 1 < n < len(x):
        raise IndexError(f"index {n} must satisfy 1 < n < {len(x)}")
    e, _, _ = log_derivative(state, x[n - 2:n + 1])
    gm = x[n - 1] - x[n - 2]
    gp = x[n] - x[n - 1]
    return float(2.0 * x[n - 1] - 2.0 * (e[2] - e[1]) / gp**2 + 2.0 * (e[1] - e[0]) / gm**2)


def schrodinger_residual(state: EnergyState, t, form: str = "stable"):
    """``t^2 - 2 eta'(t) - eta(t)^2 - (4 ell + 2)``.

    ``form="direct"`` evaluates the expression as written; it loses accuracy
    like ``eps / (t - r)^2`` next to a root ``r``. The default splits off the
    nearest root ``r_k``: with ``A = sum_{j != k} 1/(t - r_j)`` and
    ``B = sum_{j != k} 1/(t - r_j)^2`` the residual is ``4`` times

        1 + 2 sum_{j != k} 1/((t - r_j)(r_k - r_j)) + D_k / (t - r_k)
          + t A - ell - A^2 + B,

    where ``D_k = r_k - 2 sum_{j != k} 1/(r_k - r_j)`` vanishes for exact
    roots. Only the small defect ``D_k`` is divided by ``t - r_k``.
    """
    if form == "direct":
        e, de, _ = log_derivative(state, t)
        return np.square(t) - 2.0 * de - np.square(e) - (4 * state.ell + 2)
    if form != "stable":
        raise ValueError(f"unknown form {form!r}")
    t = np.asarray(t, dtype=float)
    log_derivative(state, t)  # pole check
    r = np.asarray(state.roots, dtype=float)
    if not len(r):
        return np.zeros_like(t) if t.ndim else 0.0
    tt = np.atleast_1d(t)
    k = np.argmin(np.abs(tt[:, None] - r), axis=1)
    rk = r[k]
    others = np.arange(len(r))[None, :] != k[:, None]
    with np.errstate(divide="ignore"):
        diff_k = np.where(others, rk[:, None] - r, np.inf)
    inv = np.where(others, 1.0 / (tt[:, None] - r), 0.0)
    A = inv.sum(axis=1)
    B = (inv**2).sum(axis=1)
    defect = rk - 2.0 * np.sum(1.0 / diff_k, axis=1)
    out = 4.0 * (1.0 + 2.0 * np.sum(inv / diff_k, axis=1) + defect / (tt - rk) + tt * A - state.ell - A * A + B)
    return float(out[0]) if t.ndim == 0 else out


def limit_formula(state: EnergyState, t: float, tol: float = IDENTITY_TOL) -> float:
    """``2t - 2 eta'(t) eta(t) - 2 eta''(t)``, after checking the identity behind it."""
    res = float(schrodinger_residual(state, t))
    if abs(res) > tol:
        raise ArithmeticError(f"identity residual {res:.3e} at t={t} exceeds {tol:.1e}")
    e, de, d2e = log_derivative(state, t)
    return 2.0 * t - 2.0 * de * e - 2.0 * d2e


def center_index(seq: MIWSequence) -> int:
    """1-based index ``n(0) + 1`` of the first positive point."""
    return locate(seq.points, 0.0) + 1


def center_closed_form(seq: MIWSequence) -> float:
    """``(4/x^3)(3 - x/x_next)`` at the center of a symmetric order-1 sequence."""
    n = center_index(seq)
    x, xn = seq.points[n - 1], seq.points[n]
    return float(4.0 / x**3 * (3.0 - x / xn))


@dataclass(frozen=True)
class GradientReport:
    grad: np.ndarray
    fd_error: float
    limit_values: dict
    center_value: tuple[float, float] | None  # (general gradient, closed form), order 1 only


def gradient_report(seq: MIWSequence, probes=(-1.5, 0.5, 2.0)) -> GradientReport:
    x = np.asarray(seq.points)
    g = grad_H(x)
    min_gap = np.min(np.diff(x)) if len(x) > 1 else math.inf
    # 1/gap^2 curvature swamps central differences near collisions
    fd_err = float(np.max(np.abs(g - fd_grad(x)))) if min_gap >= 1e-3 else math.nan
    limits = {}
    for t in probes:
        try:
            limits[t] = limit_formula(seq.state, t)
        except PoleError:
            limits[t] = math.nan
    center = None
    if seq.ell == 1 and tuple(seq.counts) == tuple(seq.counts)[::-1] and len(x) >= 4:
        n = center_index(seq)
        center = (float(g[n - 1]), center_closed_form(seq))
    return GradientReport(grad=g, fd_error=fd_err, limit_values=limits, center_value=center)


def stationarity(seq: MIWSequence, t: float) -> float:
    """``|dH/dx_{n(t)}|`` for the point just left of ``t``."""
    n = locate(seq.points, t)
    return abs(grad_on_miw(seq, n))


@dataclass(frozen=True)
class CenterRow:
    N: int
    x_center: float
    grad_center: float
    slope_estimate: float  # local log-log slope of x_center against the previous row


def center_row(N: int) -> tuple[int, float, float]:
    """Center point and general-formula center gradient for the order-1 sequence with counts ``(N/2, N/2)``."""
    if N % 2 or N < 4:
        raise ValueError("center scaling needs an even N >= 4")
    seq = construct(energy_state(1), (N // 2, N // 2))
    n = center_index(seq)
    return N, float(seq.points[n - 1]), float(grad_H(seq.points)[n - 1])


def center_scaling(Ns, rows=None) -> list[CenterRow]:
    """Center diagnostics along an ``N`` sweep; ``rows`` may hold precomputed ``center_row`` output."""
    raw = sorted(rows if rows is not None else [center_row(N) for N in Ns])
    out = []
    for i, (N, xc, gc) in enumerate(raw):
        slope = math.nan
        if i:
            slope = math.log(xc / raw[i - 1][1]) / math.log(N / raw[i - 1][0])
        out.append(CenterRow(N, xc, gc, slope))
    return out


def center_fit(rows: list[CenterRow]) -> dict:
    """Overall slope of ``log x_center`` vs ``log N`` and the spread of ``grad_center / N``."""
    N = np.array([r.N for r in rows], dtype=float)
    xc = np.array([r.x_center for r in rows])
    gc = np.array([r.grad_center for r in rows])
    slope = float(np.polyfit(np.log(N), np.log(xc), 1)[0])
    per_n = gc / N
    return {
        "slope": slope,
        "grad_slope": float(np.polyfit(np.log(N), np.log(gc), 1)[0]),
        "scaled_min": float((gc * xc**3).min()),
        "scaled_max": float((gc * xc**3).max()),
        "grad_per_N_spread": float(per_n.max() / per_n.min()),
    }


def center_csv(rows: list[CenterRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CENTER_CSV_HEADER)
    for r in rows:
        w.writerow([r.N, repr(r.x_center), repr(r.grad_center), "" if math.isnan(r.slope_estimate) else repr(r.slope_estimate)])
    return buf.getvalue()
