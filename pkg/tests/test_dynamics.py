import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randswitch.dynamics import (ModeDynamics, NonFiniteStateError, euclidean_norms, integrate, time_grid,
                                 trajectory_norms)
from randswitch.rng import PATHS, substream
from randswitch.switching import Deterministic, Renewal, SemiMarkov, SwitchingPath, Uniform, sample_path

DECAY = ModeDynamics.from_strings(["-x1"])
GROW = ModeDynamics.from_strings(["x1"])


def constant_path(horizon, n_modes=1):
    return SwitchingPath(0.0, horizon, np.array([]), np.array([0]), n_modes)


def test_exponential_decay():
    traj = integrate([DECAY], constant_path(1.0), [1.0], 1e-3)
    assert traj.times[-1] == 1.0
    assert abs(traj.states[-1, 0] - math.exp(-1)) < 1e-9
    assert traj.states[0, 0] == 1.0


def test_fourth_order_convergence():
    errs = []
    for h in (0.1, 0.05, 0.025, 0.0125):
        traj = integrate([DECAY], constant_path(2.0), [1.0], h)
        errs.append(abs(traj.states[-1, 0] - math.exp(-2)))
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    for r in ratios:
        assert 14.0 < r < 18.0


def test_alternating_flows_return_to_start():
    # exact flows e^{-d} e^{+d} = 1 at every period boundary
    d = 0.37
    times = np.arange(1, 20) * d
    modes = np.array([k % 2 for k in range(20)])
    path = SwitchingPath(0.0, 20 * d, times, modes, 2)
    traj = integrate([DECAY, GROW], path, [2.0], 1e-3)
    for k in range(0, 21, 2):
        t = k * d
        j = np.argmin(np.abs(traj.times - t))
        assert abs(traj.times[j] - t) < 1e-12
        assert abs(abs(traj.states[j, 0]) - 2.0) < 1e-6


def test_zero_initial_state_stays_zero(semi):
    path = sample_path(semi.law, 0.0, 20.0, substream(0, PATHS, 0))
    traj = integrate(semi.dynamics, path, [0.0, 0.0], 1e-2)
    assert not np.any(traj.states)


def test_grid_contains_every_switch_once():
    law = SemiMarkov([[0, 1], [1, 0]], (Uniform(0.0101, 0.05), Uniform(0.0202, 0.07)))
    path = sample_path(law, 0.0, 5.0, substream(4, PATHS, 0))
    grid = time_grid(path, 0.01, 5.0)
    assert grid[0] == 0.0 and grid[-1] == 5.0
    assert np.all(np.diff(grid) > 0)
    for tk in path.times[path.times < 5.0]:
        assert np.count_nonzero(grid == tk) == 1


def test_switch_on_nominal_point_not_duplicated():
    law = Renewal([0.5, 0.5], Deterministic(0.25))
    path = sample_path(law, 0.0, 2.0, substream(0, PATHS, 0))
    grid = time_grid(path, 0.05, 2.0)
    assert len(grid) == len(np.unique(np.round(grid, 12)))
    for tk in path.times[path.times < 2.0]:
        assert np.count_nonzero(grid == tk) == 1


def test_determinism(semi):
    path = sample_path(semi.law, 0.0, 10.0, substream(1, PATHS, 0))
    a = integrate(semi.dynamics, path, semi.sim.x0, 1e-2)
    b = integrate(semi.dynamics, path, semi.sim.x0, 1e-2)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.times, b.times)


def test_blow_up_reports_time():
    blow = ModeDynamics.from_strings(["x1^2"])
    with pytest.raises(NonFiniteStateError) as info:
        integrate([blow], constant_path(2.0), [10.0], 1e-3)
    assert 0.09 < info.value.t < 0.11


def test_t_end_beyond_horizon():
    with pytest.raises(ValueError):
        integrate([DECAY], constant_path(1.0), [1.0], 1e-2, t_end=2.0)


def test_field_dimension_checked():
    with pytest.raises(ValueError):
        ModeDynamics.from_strings(["x2", "x3"])


def test_equilibrium_warning(caplog):
    with caplog.at_level(logging.WARNING):
        assert not ModeDynamics.from_strings(["1 + x1"]).check_equilibrium()
    assert "not an equilibrium" in caplog.text
    assert DECAY.check_equilibrium()


def test_norms():
    assert euclidean_norms(np.array([[3.0, 4.0]]))[0] == 5.0
    assert not np.any(euclidean_norms(np.zeros((4, 2))))
    # squared components would underflow without scaling
    assert euclidean_norms(np.array([[3e-200, 4e-200]]))[0] == pytest.approx(5e-200)
    traj = integrate([DECAY], constant_path(3.0), [1.0], 1e-2)
    assert np.all(np.diff(trajectory_norms(traj)) < 0)


def test_sample_is_exact_on_grid():
    traj = integrate([DECAY], constant_path(1.0), [1.0], 0.1)
    np.testing.assert_array_equal(traj.sample(traj.times)[:, 0], traj.states[:, 0])


@given(st.floats(0.001, 0.2), st.integers(0, 50))
@settings(max_examples=40, deadline=None)
def test_grid_alignment_property(step, stream):
    law = SemiMarkov([[0, 1], [1, 0]], (Uniform(0.05, 0.5), Uniform(0.1, 0.3)))
    path = sample_path(law, 0.5, 3.0, substream(9, PATHS, stream))
    grid = time_grid(path, step, path.end)
    assert grid[0] == 0.5 and grid[-1] == path.end
    assert np.all(np.diff(grid) > 0)
    inside = path.times[path.times < path.end]
    assert np.all(np.isin(inside, grid))
