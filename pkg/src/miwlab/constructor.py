"""Construction of MIW sequences by shooting on the first point.

The forward recursion ``x_{n+1} = x_n + 1 / D_n`` with
``D_n = 1/(x_n - x_{n-1}) + eta(x_n)`` (and ``1/(x_1 - x_0) = 0``) is fully
determined by ``x_1``. Ordering trajectories by ``x_1`` is monotone: a larger
start gives larger gaps everywhere, so it either places fewer points in an
earlier region or stops (``D_n <= 0``) sooner. Bisection on that ordering
finds the unique start whose trajectory has the requested per-region counts
and meets the right boundary condition ``D_N = 0``.

Shooting amplifies rounding over long trajectories, so the bracketed
solution is finished with damped Newton iterations on the full system. The
MIW equations are the stationarity conditions of the strictly concave
``L(x) = sum log(x_{n+1} - x_n) + sum log f(x_n)`` on the set of increasing
configurations with fixed region counts, and its Hessian is tridiagonal.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solveh_banded

from .states import EnergyState, energy_state, eta, log_derivative, region_masses

MAX_POINTS = 100_000
SCAN_POINTS = 256
SCAN_REFINEMENTS = 3
MAX_BISECTIONS = 200
RESIDUAL_TOL = 1e-10
POLISH_TOL = 1e-12  # bisection output above this is refined by Newton steps
ROOT_GUARD = 1e-12
NEWTON_MAX_ITER = 50


class ConstructionError(RuntimeError):
    """Raised when no MIW sequence could be bracketed or polished."""

    def __init__(self, message: str, report: dict | None = None):
        super().__init__(message)
        self.report = report or {}


COMPLETED = "completed"
TERMINATED = "terminated_early"
ROOT_HIT = "root_hit"


@dataclass
class ShootResult:
    trajectory: np.ndarray
    regions: np.ndarray
    classification: str
    step: int | None = None
    signed_residual: float | None = None
    achieved_counts: tuple[int, ...] = ()

    @property
    def completed(self) -> bool:
        return self.classification == COMPLETED


@dataclass(frozen=True)
class MIWSequence:
    ell: int
    counts: tuple[int, ...]
    points: np.ndarray = field(repr=False)
    residuals: dict
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def N(self) -> int:
        return len(self.points)

    @property
    def state(self) -> EnergyState:
        return energy_state(self.ell)

    def to_json(self) -> dict:
        return {
            "ell": self.ell,
            "counts": list(self.counts),
            "points": [float(x) for x in self.points],
            "residuals": {k: float(self.residuals[k]) for k in ("interior", "left_bc", "right_bc")},
        }

    @classmethod
    def from_json(cls, data: dict) -> "MIWSequence":
        pts = np.asarray(data["points"], dtype=float)
        seq = cls(ell=int(data["ell"]), counts=tuple(int(c) for c in data["counts"]), points=pts, residuals={})
        object.__setattr__(seq, "residuals", _residuals(energy_state(seq.ell), pts))
        return seq

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "MIWSequence":
        return cls.from_json(json.loads(Path(path).read_text()))


def _check_start(state: EnergyState, x1: float) -> None:
    if state.region_of(x1) != 0 or (state.roots and x1 >= state.roots[0]):
        raise ValueError(f"start {x1} is not in the leftmost region")
    if not eta(state, x1) > 0:
        raise ValueError(f"start {x1} has non-positive log-derivative; no second point exists")


def shoot(state: EnergyState, x1: float, N: int) -> ShootResult:
    """Run the forward recursion from ``x1`` for up to ``N`` points."""
    _check_start(state, x1)
    return _shoot(state, float(x1), int(N), None)[0]


def _shoot(state: EnergyState, x1: float, N: int, target: tuple[int, ...] | None):
    """Forward recursion with optional early classification against ``target`` counts.

    Returns ``(ShootResult, side)`` where ``side`` is +1 when the start is
    too far left (trajectory lags the target), -1 when too far right, and
    0 when no target was given.
    """
    roots = state.roots
    two_roots = [(r, 2.0) for r in roots]
    bounds = list(roots)
    if target is not None:
        expected = np.repeat(np.arange(len(target)), target)

    xs = [x1]
    ks = [0]
    inv_gap = 0.0
    x = x1
    k = 0
    side = 0
    status = COMPLETED
    step = None
    D = None
    n = 1
    while True:
        e = -x
        for r, two in two_roots:
            e += two / (x - r)
        D = inv_gap + e
        if n == N:
            break
        if not D > 0.0:
            status, step = TERMINATED, n
            if target is not None:
                side = -1
            break
        gap = 1.0 / D
        x_new = x + gap
        while k < len(bounds) and x_new > bounds[k]:
            k += 1
        if bounds and min(abs(x_new - r) for r in bounds) < ROOT_GUARD:
            xs.append(x_new)
            ks.append(k)
            status, step = ROOT_HIT, n + 1
            break
        xs.append(x_new)
        ks.append(k)
        n += 1
        if target is not None:
            want = expected[n - 1]
            if k < want:
                side = 1
                status, step = COMPLETED, None
                break
            if k > want:
                side = -1
                break
        inv_gap = 1.0 / gap
        x = x_new
    pts = np.asarray(xs)
    regs = np.asarray(ks)
    counts = tuple(int(c) for c in np.bincount(regs, minlength=state.ell + 1))
    res = ShootResult(
        trajectory=pts,
        regions=regs,
        classification=status,
        step=step,
        signed_residual=D if (status == COMPLETED and len(pts) == N) else None,
        achieved_counts=counts,
    )
    if target is not None and side == 0:
        # reached N points in the target class: the sign of D_N decides
        side = 1 if D > 0 else -1
    return res, side


def _classify(state, x1, N, counts):
    res, side = _shoot(state, x1, N, counts)
    if res.classification == ROOT_HIT:
        # nudge off the pole and retry once on each side
        for dx in (1e-15, -1e-15, 1e-13, -1e-13):
            res, side = _shoot(state, x1 + dx * max(1.0, abs(x1)), N, counts)
            if res.classification != ROOT_HIT:
                break
    return res, side


def _start_interval(state: EnergyState, N: int) -> tuple[float, float]:
    """Search interval for ``x1``: ``eta(x1) > 0`` holds strictly left of the cap."""
    if state.roots:
        r1 = state.roots[0]
        # eta is decreasing on the leftmost region and changes sign once
        lo, hi = r1 - 10.0, r1
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if eta(state, mid) > 0:
                lo = mid
            else:
                hi = mid
        cap = lo
    else:
        cap = 0.0
    left = min(cap, 0.0) - 2.0 * math.sqrt(max(math.log(N), 1.0)) - 2.0
    return left, math.nextafter(cap, -math.inf)


def _scan_bracket(state, N, counts):
    left, right = _start_interval(state, N)
    npts = SCAN_POINTS
    for attempt in range(SCAN_REFINEMENTS + 1):
        grid = np.linspace(left, right, npts)
        sides = [_classify(state, float(g), N, counts)[1] for g in grid]
        sides = np.asarray(sides)
        if sides[0] < 0:
            # even the leftmost start runs ahead; widen to the left
            left = left - 2.0 * (right - left)
            continue
        flips = np.nonzero((sides[:-1] > 0) & (sides[1:] < 0))[0]
        if len(flips):
            i = flips[0]
            return float(grid[i]), float(grid[i + 1]), attempt
        npts *= 4
    raise ConstructionError(
        "could not bracket the first point",
        {"interval": (left, right), "grid_points": npts, "counts": counts},
    )


def _bisect(state, N, counts, lo, hi):
    best = None
    it = 0
    for it in range(1, MAX_BISECTIONS + 1):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        res, side = _classify(state, mid, N, counts)
        if res.signed_residual is not None and res.achieved_counts == counts:
            if best is None or abs(res.signed_residual) < abs(best.signed_residual):
                best = res
            if abs(res.signed_residual) <= RESIDUAL_TOL:
                break
        if side > 0:
            lo = mid
        else:
            hi = mid
    if best is None:
        res, _ = _classify(state, lo, N, counts)
        if res.signed_residual is not None and res.achieved_counts == counts:
            best = res
    return best, lo, hi, it


def _residual_vector(state: EnergyState, x: np.ndarray) -> np.ndarray:
    """``F_n = 1/(x_{n+1}-x_n) - 1/(x_n-x_{n-1}) - eta(x_n)`` with zero sentinels."""
    zeta = np.zeros(len(x) + 1)
    zeta[1:-1] = 1.0 / np.diff(x)
    e, _, _ = log_derivative(state, x)
    return zeta[1:] - zeta[:-1] - e


def _objective(state: EnergyState, x: np.ndarray) -> float:
    from .states import hermite_eval

    p, _ = hermite_eval(state.ell, x)
    return float(np.sum(np.log(np.diff(x))) + np.sum(np.log(p * p) - 0.5 * x * x))


def _in_cell(state: EnergyState, x: np.ndarray, regions: np.ndarray) -> bool:
    if np.any(np.diff(x) <= 0) or not np.all(np.isfinite(x)):
        return False
    edges = np.asarray([-np.inf, *state.roots, np.inf])
    return bool(np.all(x > edges[regions]) and np.all(x < edges[regions + 1]))


def newton_polish(state: EnergyState, x: np.ndarray, regions: np.ndarray, tol: float = POLISH_TOL,
                  max_iter: int = NEWTON_MAX_ITER) -> tuple[np.ndarray, int]:
    """Maximize the concave objective from ``x`` within its region-count cell.

    Stops at ``tol`` (relative residual) or once rounding stalls progress, and
    returns the best iterate with the number of iterations used.
    """
    x = np.array(x, dtype=float)
    best_x, best_r = x, math.inf
    for it in range(max_iter):
        F = _residual_vector(state, x)
        e, deta, _ = log_derivative(state, x)
        r = float(np.max(np.abs(F) / (1.0 + np.abs(e))))
        if r < best_r:
            best_x, best_r = x, r
        elif r > 0.5 * best_r and best_r < 1e-6:
            break
        if r <= tol:
            break
        zeta2 = np.zeros(len(x) + 1)
        zeta2[1:-1] = np.diff(x) ** -2
        # -dF/dx is the negated Hessian of the objective: symmetric positive definite
        ab = np.zeros((2, len(x)))
        ab[0, 1:] = -zeta2[1:-1]
        ab[1] = zeta2[1:] + zeta2[:-1] - deta
        step = solveh_banded(ab, -F)
        L0 = _objective(state, x)
        t = 1.0
        while t > 1e-12:
            trial = x + t * step
            if _in_cell(state, trial, regions) and _objective(state, trial) >= L0 - 1e-12 * abs(L0):
                break
            t *= 0.5
        else:
            break
        x = trial
    return best_x, it


def _residuals(state: EnergyState, x: np.ndarray) -> dict:
    e, _, _ = log_derivative(state, x)
    inv = 1.0 / np.diff(x)
    if len(x) >= 3:
        interior = np.abs(inv[1:] - inv[:-1] - e[1:-1]) / (1.0 + np.abs(e[1:-1]))
        interior_max = float(interior.max())
    else:
        interior_max = 0.0
    left = abs(inv[0] - e[0]) / (1.0 + abs(e[0]))
    right = abs(inv[-1] + e[-1]) / (1.0 + abs(e[-1]))
    return {"interior": interior_max, "left_bc": float(left), "right_bc": float(right)}


def _check_counts(state: EnergyState, counts) -> tuple[int, ...]:
    counts = tuple(int(c) for c in counts)
    if len(counts) != state.ell + 1:
        raise ValueError(f"need {state.ell + 1} region counts, got {len(counts)}")
    if state.ell == 0 and counts[0] < 2:
        raise ValueError("order 0 needs at least 2 points")
    if any(c < 1 for c in counts):
        raise ValueError("every region needs at least one point")
    if sum(counts) > MAX_POINTS:
        raise ValueError(f"at most {MAX_POINTS} points per construction")
    return counts


def construct(state: EnergyState, counts) -> MIWSequence:
    """The unique MIW sequence with ``counts[k]`` points in region ``k``."""
    counts = _check_counts(state, counts)
    N = sum(counts)
    lo, hi, refinements = _scan_bracket(state, N, counts)
    best, lo, hi, iters = _bisect(state, N, counts, lo, hi)
    if best is None:
        raise ConstructionError("bisection never produced a trajectory with the target counts",
                                {"bracket": (lo, hi), "counts": counts})
    x = best.trajectory.copy()
    regions = best.regions.copy()
    newton_iters = 0
    res = _residuals(state, x)
    if max(res.values()) > POLISH_TOL:
        x, newton_iters = newton_polish(state, x, regions)
        res = _residuals(state, x)
    if tuple(np.bincount(regions, minlength=state.ell + 1)) != counts:
        raise ConstructionError("polished sequence left its region cell", {"counts": counts})
    symmetry_defect = None
    if counts == counts[::-1]:
        # palindromic counts: the solution is reflection symmetric; remove rounding asymmetry
        symmetry_defect = float(np.max(np.abs(x + x[::-1])))
        x = 0.5 * (x - x[::-1])
        res = _residuals(state, x)
    meta = {
        "bisections": iters,
        "bracket": (lo, hi),
        "scan_refinements": refinements,
        "newton_iterations": newton_iters,
        "shoot_residual": best.signed_residual,
        "symmetry_defect": symmetry_defect,  # before symmetrization
    }
    return MIWSequence(ell=state.ell, counts=counts, points=x, residuals=res, meta=meta)


def auto_counts(state: EnergyState, N: int) -> tuple[int, ...]:
    """Floor allocation ``N_k = floor(N * mass_k)``; the last region takes the rest."""
    masses = [rm.mass for rm in region_masses(state)]
    # the slack keeps exact products such as N * 1/2 from flooring one short
    counts = [int(math.floor(N * m + 1e-9)) for m in masses[:-1]]
    counts.append(N - sum(counts))
    return tuple(counts)


def construct_auto(state: EnergyState, N: int) -> MIWSequence:
    counts = auto_counts(state, int(N))
    if any(c < 1 for c in counts) or (state.ell == 0 and N < 2):
        raise ValueError(f"N={N} is too small: allocation {counts} leaves a region empty")
    return construct(state, counts)


def verify(seq: MIWSequence) -> dict:
    """Recompute every invariant of ``seq``; values are maximum violations."""
    state = seq.state
    x = np.asarray(seq.points)
    report = _residuals(state, x)
    report["min_gap"] = float(np.min(np.diff(x))) if len(x) > 1 else math.inf
    report["increasing"] = bool(np.all(np.diff(x) > 0))
    report["root_distance"] = float(min((np.min(np.abs(x - r)) for r in state.roots), default=math.inf))
    regions = np.searchsorted(np.asarray(state.roots), x)
    achieved = tuple(int(c) for c in np.bincount(regions, minlength=state.ell + 1))
    report["counts"] = achieved
    report["counts_ok"] = achieved == tuple(seq.counts)
    report["symmetry"] = float(np.max(np.abs(x + x[::-1]))) if tuple(seq.counts) == tuple(seq.counts)[::-1] else None
    return report
