import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from conftest import seq
from miwlab import dynamics as D
from miwlab.stability import grad_H


def test_force_examples():
    assert D.force([1.0]) == pytest.approx([-2.0])
    assert np.max(np.abs(D.force([-1.0, 0.0, 1.0]))) <= 1e-12
    x = np.array(D.ARBITRARY_START)
    assert np.allclose(D.force(x), -oracles.fd_gradient(x), atol=1e-6)


def test_harmonic_single_world():
    t_end = math.pi / math.sqrt(2)
    traj = D.simulate(D.PhaseState.start([1.0]), 1e-4, t_end, stride=1000)
    assert traj.states[-1].t == pytest.approx(t_end, abs=1e-12)
    assert abs(traj.states[-1].x[0] + 1.0) <= 1e-6
    ts = traj.times
    assert np.max(np.abs(traj.positions[:, 0] - np.cos(math.sqrt(2) * ts))) <= 1e-6


def test_ground_state_static():
    s = D.PhaseState.from_sequence(seq(0, (3,)))
    one = D.step(s, 1e-3)
    assert np.max(np.abs(one.x - s.x)) <= 1e-10
    traj = D.simulate(s, 1e-3, 10.0, stride=100)
    assert traj.excursion() <= 1e-6


@given(st.lists(st.floats(0.4, 1.5), min_size=5, max_size=5), st.lists(st.floats(-1, 1), min_size=5, max_size=5),
       st.floats(1e-4, 1e-2))
def test_reversibility(gaps, p, dt):
    x = -2.0 + np.cumsum(gaps)
    s = D.PhaseState.start(x, p)
    back = D.step(D.step(s, dt), -dt)
    assert np.max(np.abs(back.x - s.x)) <= 1e-12
    assert np.max(np.abs(back.p - s.p)) <= 1e-12 * max(1.0, np.max(np.abs(grad_H(x))))


@given(st.lists(st.floats(0.4, 1.5), min_size=2, max_size=4))
def test_symmetry_preserved(half_gaps):
    # reflection-symmetric start with zero momenta
    right = np.cumsum(half_gaps) - half_gaps[0] / 2
    x = np.concatenate([-right[::-1], right])
    traj = D.simulate(D.PhaseState.start(x), 1e-3, 0.5, stride=50)
    X = traj.positions
    assert np.max(np.abs(X + X[:, ::-1])) <= 1e-8


def test_zero_dt_rejected():
    with pytest.raises(ValueError):
        D.step(D.PhaseState.start([0.0, 1.0]), 0.0)
    with pytest.raises(ValueError):
        D.simulate(D.PhaseState.start([0.0, 1.0]), -1e-3, 1.0)


def test_collision_reported_with_partial_trajectory():
    s = D.PhaseState.start([0.0, 1.0], [5e3, -5e3])
    with pytest.raises(D.CollisionError) as exc:
        D.simulate(s, 1e-3, 1.0)
    assert exc.value.index == 0
    assert exc.value.trajectory is not None and len(exc.value.trajectory.states) >= 1


def test_unordered_start_rejected():
    with pytest.raises(D.CollisionError):
        D.PhaseState.start([1.0, 0.0])


def test_drift_is_second_order():
    init = D.PhaseState.from_sequence(seq(1, (3, 2)))
    d = [D.simulate(init, dt, 2.0, stride=10).max_drift() for dt in (2e-3, 1e-3)]
    assert 3.5 <= d[0] / d[1] <= 4.5


def test_ordering_preserved_on_test_runs():
    for x in (seq(1, (3, 2)).points, np.array(D.ARBITRARY_START)):
        traj = D.simulate(D.PhaseState.start(x), 1e-3, 10.0, stride=10)
        assert np.all(np.diff(traj.positions, axis=1) > 0)


def test_matched_energy_start():
    target = D.total_energy(seq(1, (3, 2)).points, np.zeros(5))
    x = D.matched_energy_start(D.ARBITRARY_START, target)
    assert D.total_energy(x, np.zeros(5)) == pytest.approx(target, rel=1e-12)
    assert np.mean(x) == pytest.approx(np.mean(D.ARBITRARY_START))


def test_miw_start_flatter_than_matched_arbitrary_start():
    miw = seq(1, (3, 2)).points
    target = D.total_energy(miw, np.zeros(5))
    arb = D.matched_energy_start(D.ARBITRARY_START, target)
    # initial forces, and displacement over a short horizon
    assert np.linalg.norm(grad_H(miw)) < np.linalg.norm(grad_H(arb))
    e_miw = D.simulate(D.PhaseState.start(miw), 1e-3, D.SHORT_HORIZON, stride=1).excursion()
    e_arb = D.simulate(D.PhaseState.start(arb), 1e-3, D.SHORT_HORIZON, stride=1).excursion()
    assert e_miw < e_arb


def test_trajectory_csv():
    traj = D.simulate(D.PhaseState.start([-0.5, 0.5]), 1e-2, 0.1, stride=5)
    lines = traj.to_csv().splitlines()
    assert lines[0] == "t,x1,x2,p1,p2,H"
    assert len(lines) == 1 + len(traj.states) == 4
