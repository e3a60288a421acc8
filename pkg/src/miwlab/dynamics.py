"""Hamiltonian dynamics of interacting worlds.

``H_MIW(x, p) = sum p^2 / 2 + H(x)`` where ``H`` is the potential energy of
the stability module. Integration is velocity Verlet (kick, drift, kick),
which is symplectic, second order and time reversible.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .constructor import MIWSequence
from .metrics import energy
from .stability import grad_H

MIN_GAP = 1e-9

# Fixed N = 5 start with no relation to any MIW sequence, used as the
# "arbitrary" scenario when comparing excursions against MIW initial data.
ARBITRARY_START = (-2.1, -1.3, -0.2, 0.9, 1.4)
# "short" horizon for excursion comparisons: a small fraction of the
# harmonic period 2 pi / sqrt(2)
SHORT_HORIZON = 0.25


class CollisionError(RuntimeError):
    """Two neighbouring worlds came closer than ``MIN_GAP``."""

    def __init__(self, index: int, t: float, trajectory: "Trajectory | None" = None):
        super().__init__(f"worlds {index} and {index + 1} collided at t={t:.6g}")
        self.index = index
        self.t = t
        self.trajectory = trajectory


@dataclass(frozen=True)
class PhaseState:
    t: float
    x: np.ndarray
    p: np.ndarray
    energy_0: float = math.nan

    @classmethod
    def start(cls, x, p=None, t: float = 0.0) -> "PhaseState":
        x = np.array(x, dtype=float)
        p = np.zeros_like(x) if p is None else np.array(p, dtype=float)
        if p.shape != x.shape:
            raise ValueError("positions and momenta must have the same length")
        _check_order(x, t)
        return cls(t=t, x=x, p=p, energy_0=total_energy(x, p))

    @classmethod
    def from_sequence(cls, seq: MIWSequence, p=None) -> "PhaseState":
        return cls.start(seq.points, p)

    @property
    def energy(self) -> float:
        return total_energy(self.x, self.p)


@dataclass
class Trajectory:
    states: list[PhaseState] = field(default_factory=list)
    dt: float = math.nan
    integrator: str = "velocity-verlet"
    stride: int = 1

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def positions(self) -> np.ndarray:
        return np.array([s.x for s in self.states])

    @property
    def energies(self) -> np.ndarray:
        return np.array([s.energy for s in self.states])

    def max_drift(self) -> float:
        """``max_t |H(t) - H(0)| / |H(0)|`` over the sampled states."""
        e = self.energies
        return float(np.max(np.abs(e - e[0])) / abs(e[0]))

    def excursion(self, horizon: float | None = None) -> float:
        """``sum_n max_t |x_n(t) - x_n(0)|`` over sampled times up to ``t(0) + horizon``."""
        X = self.positions
        if horizon is not None:
            X = X[self.times <= self.states[0].t + horizon + 1e-12]
        return float(np.sum(np.max(np.abs(X - X[0]), axis=0)))

    def to_csv(self) -> str:
        n = len(self.states[0].x) if self.states else 0
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *[f"x{i}" for i in range(1, n + 1)], *[f"p{i}" for i in range(1, n + 1)], "H"])
        for s in self.states:
            w.writerow([repr(float(s.t)), *map(repr, map(float, s.x)), *map(repr, map(float, s.p)), repr(s.energy)])
        return buf.getvalue()


def total_energy(x, p) -> float:
    return 0.5 * float(np.dot(p, p)) + energy(x)[2]


def _check_order(x, t: float) -> None:
    gaps = np.diff(x)
    bad = np.nonzero(~(gaps > MIN_GAP))[0]
    if len(bad):
        raise CollisionError(int(bad[0]), t)


def force(x) -> np.ndarray:
    """``-dH/dx``."""
    return -grad_H(x)


def step(state: PhaseState, dt: float) -> PhaseState:
    """One kick-drift-kick step; a negative ``dt`` integrates backwards."""
    if dt == 0:
        raise ValueError("dt must be non-zero")
    p_half = state.p + 0.5 * dt * force(state.x)
    x_new = state.x + dt * p_half
    t_new = state.t + dt
    _check_order(x_new, t_new)
    p_new = p_half + 0.5 * dt * force(x_new)
    return PhaseState(t=t_new, x=x_new, p=p_new, energy_0=state.energy_0)


def simulate(init: PhaseState, dt: float, t_max: float, stride: int = 1) -> Trajectory:
    """Integrate to ``t_max`` and keep every ``stride``-th state (plus the start).

    A collision raises ``CollisionError`` carrying the partial trajectory.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if stride < 1:
        raise ValueError("stride must be at least 1")
    span = t_max - init.t
    steps = max(int(math.ceil(span / dt - 1e-9)), 0)
    traj = Trajectory(states=[init], dt=dt, stride=stride)
    s = init
    for i in range(1, steps + 1):
        # the last step is shortened so the run ends exactly at t_max
        h = dt if i < steps else span - (steps - 1) * dt
        try:
            s = step(s, h)
        except CollisionError as exc:
            exc.trajectory = traj
            raise
        if i % stride == 0 or i == steps:
            traj.states.append(s)
    return traj


def matched_energy_start(x, target_H: float) -> np.ndarray:
    """Rescale ``x`` about its mean so that the potential ``H`` equals ``target_H``."""
    x = np.asarray(x, dtype=float)
    c = x.mean()

    def excess(s):
        return energy(c + s * (x - c))[2] - target_H

    # H -> inf as s -> 0 (interaction) and as s -> inf (confinement); take the branch containing s = 1
    lo, hi = 1.0, 1.0
    if excess(1.0) < 0:
        # below target: expand outward until H exceeds it
        while excess(hi) < 0:
            hi *= 2.0
        return c + brentq(excess, lo, hi, xtol=1e-15) * (x - c)
    raise ValueError("target energy is below the energy of the given shape at unit scale")
