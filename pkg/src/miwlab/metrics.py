"""Gap and span diagnostics, Wasserstein-1 distances, energies and rate fits.

The distance between the empirical measure ``Q`` of a sequence and the
target ``P`` is ``d(Q, P) = int |F_Q - F_P| dx``. ``F_Q`` is a step function,
so the integral splits at the sequence points. On a step at level ``L`` the
integrand ``|L - F_P|`` changes sign at most once (``F_P`` is monotone), and
the signed pieces integrate in closed form through

    int_a^b (F_P - L) dt = b (F_P(b) - L) - a (F_P(a) - L) - (M(b) - M(a))

with ``M(x) = int_{-inf}^x t f(t) dt``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .constructor import MIWSequence
from .states import EnergyState, cdf, partial_first_moment, region_masses

CROSSING_TOL = 1e-12
RATE_CSV_HEADER = ["N", "ell", "counts", "wasserstein", "coupling_bound", "max_gap", "x1", "xN", "H", "runtime_ms"]


def locate(points, t: float) -> int:
    """``n(t) = max{k : x_k <= t}`` with ``x_0 = -inf``; returns a value in ``0..N``."""
    return int(np.searchsorted(np.asarray(points), t, side="right"))


# --------------------------------------------------------------------------
# gaps and spans


@dataclass(frozen=True)
class GapReport:
    max_gap: float
    argmax: int  # the largest gap is x[argmax+1] - x[argmax] (0-based)
    first_gap: float
    last_gap: float
    root_gaps: tuple[float, ...]
    span: tuple[float, float]
    span_ratio_right: float
    span_ratio_left: float
    max_at_structural: bool


def gap_report(seq: MIWSequence) -> GapReport:
    x = np.asarray(seq.points)
    if len(x) < 2:
        raise ValueError("need at least two points")
    gaps = np.diff(x)
    i = int(np.argmax(gaps))
    roots = seq.state.roots
    root_idx = [locate(x, r) for r in roots]
    # a root crossing sits between x[n(r)-1] and x[n(r)] in 0-based terms
    root_gaps = tuple(float(x[n] - x[n - 1]) for n in root_idx)
    structural = {0, len(gaps) - 1} | {n - 1 for n in root_idx}
    n_first, n_last = seq.counts[0], seq.counts[-1]

    def ratio(v, n):
        return v / math.sqrt(math.log(n)) if n > 1 else math.inf

    return GapReport(
        max_gap=float(gaps[i]),
        argmax=i,
        first_gap=float(gaps[0]),
        last_gap=float(gaps[-1]),
        root_gaps=root_gaps,
        span=(float(x[0]), float(x[-1])),
        span_ratio_right=ratio(float(x[-1]), n_last),
        span_ratio_left=ratio(abs(float(x[0])), n_first),
        max_at_structural=i in structural,
    )


# --------------------------------------------------------------------------
# Wasserstein-1


@dataclass(frozen=True)
class WassersteinReport:
    distance: float
    coupling_bound: float
    per_region: tuple[tuple[int, float, float], ...]  # (k, d(Q_k, P_k), N_k / N)
    scaled: float


def _signed(a, b, Fa, Fb, Ma, Mb, L):
    """``int_a^b (F - L)`` for arrays of finite intervals."""
    return b * (Fb - L) - a * (Fa - L) - (Mb - Ma)


def _crossings(state, lo, hi, level):
    """Vectorized bisection for ``F(s) = level`` on brackets ``[lo, hi]``."""
    lo = lo.copy()
    hi = hi.copy()
    for _ in range(200):
        if not len(lo) or np.max(hi - lo) <= CROSSING_TOL:
            break
        mid = 0.5 * (lo + hi)
        below = cdf(state, mid) < level
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def _piece_distance(state: EnergyState, y, r_lo: float, r_hi: float) -> float:
    """``d(Q, P)`` for points ``y`` and ``P`` = ``f`` conditioned on ``(r_lo, r_hi)``."""
    y = np.asarray(y, dtype=float)
    m = len(y)
    F_lo, F_hi = (cdf(state, np.array([r_lo, r_hi])))
    M_lo, M_hi = partial_first_moment(state, np.array([r_lo, r_hi]))
    mass = F_hi - F_lo
    Fy = cdf(state, y)
    My = partial_first_moment(state, y)

    # tails: int_{r_lo}^{y_1} (F - F_lo) and int_{y_m}^{r_hi} (F_hi - F)
    left = y[0] * (Fy[0] - F_lo) - (My[0] - M_lo)
    right = (M_hi - My[-1]) - y[-1] * (F_hi - Fy[-1])
    total = left + right

    if m > 1:
        a, b = y[:-1], y[1:]
        Fa, Fb, Ma, Mb = Fy[:-1], Fy[1:], My[:-1], My[1:]
        L = F_lo + mass * np.arange(1, m) / m
        whole = _signed(a, b, Fa, Fb, Ma, Mb, L)
        above = Fa >= L  # F - L >= 0 on the whole step
        below = Fb <= L
        cross = ~(above | below)
        total += np.sum(whole[above]) - np.sum(whole[below])
        if np.any(cross):
            ac, bc, Lc = a[cross], b[cross], L[cross]
            s = _crossings(state, ac, bc, Lc)
            Fs = cdf(state, s)
            Ms = partial_first_moment(state, s)
            neg = _signed(ac, s, Fa[cross], Fs, Ma[cross], Ms, Lc)
            pos = _signed(s, bc, Fs, Fb[cross], Ms, Mb[cross], Lc)
            total += np.sum(pos) - np.sum(neg)
    return float(total / mass)


def coupling_bound(seq_or_points) -> float:
    """``(x_N - x_1) / (N - 1)``."""
    x = np.asarray(getattr(seq_or_points, "points", seq_or_points))
    if len(x) < 2:
        raise ValueError("need at least two points")
    return float((x[-1] - x[0]) / (len(x) - 1))


def wasserstein_points(state: EnergyState, points) -> float:
    """Exact ``d(Q, P)`` for the empirical measure of ``points``."""
    return _piece_distance(state, np.sort(np.asarray(points, dtype=float)), -math.inf, math.inf)


def wasserstein(seq: MIWSequence, state: EnergyState | None = None) -> WassersteinReport:
    state = state or seq.state
    x = np.asarray(seq.points)
    N = len(x)
    d = wasserstein_points(state, x)
    edges = [-math.inf, *state.roots, math.inf]
    regions = np.searchsorted(np.asarray(state.roots), x)
    per_region = []
    for k in range(state.ell + 1):
        y = x[regions == k]
        dk = _piece_distance(state, y, edges[k], edges[k + 1]) if len(y) else math.nan
        per_region.append((k, dk, len(y) / N))
    scaled = d * N / math.sqrt(math.log(N)) if N > 1 else math.inf
    return WassersteinReport(distance=d, coupling_bound=coupling_bound(x), per_region=tuple(per_region), scaled=scaled)


def mixture_distance(distances, shares, masses, abs_means) -> dict:
    """Assemble the mixture estimate for ``d(M_n, M)`` and compare with its bounds.

    ``assembled = sum_k c_{n,k} d_k + sum_k |c_{n,k} - c_k| mu_k`` bounds the
    mixture distance. With ``r`` the larger of ``max d_k`` and
    ``max |c_{n,k} - c_k|`` and ``mu = max mu_k``, ``assembled`` never exceeds
    ``(1 + (K + 1) mu) r``. The tighter-looking ``(K + mu) r`` is reported as
    ``bound_km`` and may fail when ``K + 1`` shares all miss by ``r``.
    """
    d = np.asarray(distances, dtype=float)
    c_n = np.asarray(shares, dtype=float)
    c = np.asarray(masses, dtype=float)
    mu_k = np.asarray(abs_means, dtype=float)
    if not (len(d) == len(c_n) == len(c) == len(mu_k)):
        raise ValueError("per-region inputs must have equal length")
    if abs(c_n.sum() - 1.0) > 1e-9 or abs(c.sum() - 1.0) > 1e-9:
        raise ValueError("shares and masses must each sum to 1")
    K = len(d) - 1
    dc = np.abs(c_n - c)
    assembled = float(np.sum(c_n * d) + np.sum(dc * mu_k))
    r = float(max(d.max(), dc.max()))
    mu = float(mu_k.max())
    bound = (1.0 + (K + 1) * mu) * r
    return {
        "assembled": assembled,
        "r": r,
        "mu": mu,
        "bound": bound,
        "bound_km": (K + mu) * r,
        "holds": assembled <= bound * (1 + 1e-12),
        "holds_km": assembled <= (K + mu) * r * (1 + 1e-12),
    }


def mixture_check(seq: MIWSequence) -> dict:
    """``mixture_distance`` fed from a sequence's own per-region distances."""
    rep = wasserstein(seq)
    rm = region_masses(seq.state)
    out = mixture_distance([p[1] for p in rep.per_region], [p[2] for p in rep.per_region],
                           [m.mass for m in rm], [m.conditional_abs_mean for m in rm])
    out["distance"] = rep.distance
    return out


# --------------------------------------------------------------------------
# energy


def _checked(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or len(x) < 1:
        raise ValueError("configuration must be a non-empty vector")
    if np.any(np.diff(x) <= 0):
        raise ValueError("configuration must be strictly increasing")
    return x


def zeta(x) -> np.ndarray:
    """``zeta_1 .. zeta_{N+1}`` with ``zeta_n = 1/(x_n - x_{n-1})`` and zero sentinels."""
    z = np.zeros(len(x) + 1)
    z[1:-1] = 1.0 / np.diff(x)
    return z


def energy(seq_or_points) -> tuple[float, float, float]:
    """``(V, U, H)`` with ``V = sum x^2``, ``U = sum (zeta_{n+1} - zeta_n)^2``."""
    x = _checked(getattr(seq_or_points, "points", seq_or_points))
    V = float(np.dot(x, x))
    U = float(np.sum(np.diff(zeta(x)) ** 2))
    return V, U, V + U


# --------------------------------------------------------------------------
# rate tables


@dataclass
class RateRow:
    N: int
    ell: int
    counts: tuple[int, ...]
    wasserstein: float
    coupling_bound: float
    max_gap: float
    x1: float
    xN: float
    H: float
    runtime_ms: float = 0.0


@dataclass
class RateTable:
    rows: list[RateRow] = field(default_factory=list)

    def sorted(self) -> "RateTable":
        return RateTable(sorted(self.rows, key=lambda r: (r.ell, r.N)))

    def to_csv(self, include_runtime: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RATE_CSV_HEADER)
        for r in self.sorted().rows:
            w.writerow([r.N, r.ell, ";".join(map(str, r.counts)), repr(r.wasserstein), repr(r.coupling_bound),
                        repr(r.max_gap), repr(r.x1), repr(r.xN), repr(r.H),
                        f"{r.runtime_ms:.1f}" if include_runtime else ""])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RateTable":
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            rows.append(RateRow(
                N=int(rec["N"]), ell=int(rec["ell"]), counts=tuple(int(c) for c in rec["counts"].split(";")),
                wasserstein=float(rec["wasserstein"]), coupling_bound=float(rec["coupling_bound"]),
                max_gap=float(rec["max_gap"]), x1=float(rec["x1"]), xN=float(rec["xN"]), H=float(rec["H"]),
                runtime_ms=float(rec["runtime_ms"] or 0.0),
            ))
        return cls(rows)


def rate_row(seq: MIWSequence, runtime_ms: float = 0.0) -> RateRow:
    rep = wasserstein(seq)
    g = gap_report(seq)
    return RateRow(N=seq.N, ell=seq.ell, counts=tuple(seq.counts), wasserstein=rep.distance,
                   coupling_bound=rep.coupling_bound, max_gap=g.max_gap, x1=g.span[0], xN=g.span[1],
                   H=energy(seq)[2], runtime_ms=runtime_ms)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    scaled_min: float
    scaled_max: float
    scaled_trend: float  # slope of log(scaled) against log(log N)

    @property
    def scaled_spread(self) -> float:
        return self.scaled_max / self.scaled_min

    @property
    def flagged(self) -> bool:
        """True when the scaled ratio drifts like a power of ``log N``."""
        return abs(self.scaled_trend) > 0.25


def rate_fit(table, value: str = "wasserstein") -> RateFit:
    """Least-squares fit of ``log d`` against ``log N``; ``table`` is a RateTable or ``(N, d)`` pairs."""
    if isinstance(table, RateTable):
        pairs = [(r.N, getattr(r, value)) for r in table.rows]
    else:
        pairs = list(table)
    if len(pairs) < 4:
        raise ValueError("need at least 4 rows for a rate fit")
    N = np.array([p[0] for p in pairs], dtype=float)
    d = np.array([p[1] for p in pairs], dtype=float)
    if len(np.unique(N)) < 2 or np.any(d <= 0) or np.any(N <= 1):
        raise ValueError("degenerate rate table")
    slope, intercept = np.polyfit(np.log(N), np.log(d), 1)
    scaled = d * N / np.sqrt(np.log(N))
    trend = np.polyfit(np.log(np.log(N)), np.log(scaled), 1)[0] if len(np.unique(N)) > 1 else 0.0
    return RateFit(float(slope), float(intercept), float(scaled.min()), float(scaled.max()), float(trend))
