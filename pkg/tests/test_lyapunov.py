import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randswitch.dynamics import ModeDynamics, integrate
from randswitch.lyapunov import (LyapunovSpec, ball_points, check_derivative_condition,
                                 check_jump_condition, check_sandwich, counts_consistent, default_samples,
                                 log_bound_series, lyapunov_derivative, pathwise_bound_check)
from randswitch.exprlang import compile_scalar, compile_vector, parse_expr
from randswitch.rng import PATHS, substream
from randswitch.switching import SemiMarkov, SwitchingPath, Uniform, sample_path

SAMPLES = default_samples(2)


def ex1_spec(lam=("-2", "-3*t^2+abs(cos(t))", "t*(cos(t)-0.5)"), mu=(1.01, 2, 2), c1=0.5):
    return LyapunovSpec.from_strings(2, ["0.5*(x1^2+x2^2)", "x1^2+x2^2", "0.5*x1^2+x2^2"], list(lam), list(mu),
                                     c1, 2, 1, 2)


def test_spec_validation():
    with pytest.raises(ValueError):
        ex1_spec(mu=(0.9, 2, 2))
    with pytest.raises(ValueError):
        ex1_spec(lam=("-2*x1", "-1", "-1"))
    with pytest.raises(ValueError):
        ex1_spec(c1=0.0)


def test_sandwich_example_and_origin():
    rep = check_sandwich(ex1_spec(), SAMPLES)
    assert rep.passed and rep.samples == 2 * 3 * len(SAMPLES)
    assert check_sandwich(ex1_spec(), [(1.0, (0.0, 0.0))]).passed


def test_sandwich_violation():
    spec = LyapunovSpec.from_strings(1 + 1, ["0.5*(x1^2+x2^2)"], ["-2"], [1.0], 2.0, 2, 3.0, 2)
    rep = check_sandwich(spec, [(0.0, (1.0, 0.0))])
    assert not rep.passed
    v = rep.violations[0]
    assert (v.lhs, v.rhs) == (2.0, 0.5)


def test_derivative_mode1_violation_with_lambda_minus3():
    spec = ex1_spec(lam=("-3", "-1", "-1"))
    dyn = ModeDynamics.from_strings(["-2*x1 + x2", "x1 - 2*x2"])
    rep = check_derivative_condition(spec, dyn, 0, [(4.2, (1.0, 1.0))])
    assert not rep.passed
    assert rep.violations[0].lhs == pytest.approx(-2.0, abs=1e-6)
    assert rep.violations[0].rhs == pytest.approx(-3.0)


def test_derivative_at_origin_passes(semi):
    spec = semi.lyapunov
    for i, d in enumerate(semi.dynamics):
        assert check_derivative_condition(spec, d, i, [(3.0, (0.0, 0.0))]).passed


def test_example_conditions_pass(semi):
    spec = semi.lyapunov
    reports = [check_sandwich(spec, SAMPLES), check_jump_condition(spec, SAMPLES)]
    reports += [check_derivative_condition(spec, d, i, SAMPLES) for i, d in enumerate(semi.dynamics)]
    for r in reports:
        assert r.passed, r.to_text()
        assert r.worst_margin <= 0


def test_literal_example_violates_modes_2_and_3(literal):
    spec = literal.lyapunov
    reps = [check_derivative_condition(spec, d, i, SAMPLES) for i, d in enumerate(literal.dynamics)]
    assert reps[0].passed
    assert not reps[1].passed and not reps[2].passed
    # mode 2 fails only where cos t < 0
    assert all(math.cos(v.t) < 0 for v in reps[1].violations)


def test_jump_violation_when_mu2_lowered():
    rep = check_jump_condition(ex1_spec(mu=(1.01, 1.5, 2)), [(0.0, (1.0, 0.0))])
    assert not rep.passed
    assert any(v.mode == 1 and v.other_mode == 0 for v in rep.violations)


def test_jump_at_origin():
    assert check_jump_condition(ex1_spec(mu=(1, 1, 1)), [(0.0, (0.0, 0.0))]).passed


def test_report_serialization():
    rep = check_jump_condition(ex1_spec(mu=(1.01, 1.5, 2)), [(0.0, (1.0, 0.0))])
    text = rep.to_text()
    assert "FAIL" in text and "jump" in text
    row = next(rep.to_csv_rows())
    assert row[:3] == ("jump", 2, 1)


def test_ball_points_inside_ball_and_deterministic():
    pts = ball_points(3, 200, 5.0)
    assert pts.shape == (200, 3)
    assert np.all(np.linalg.norm(pts, axis=1) <= 5.0)
    np.testing.assert_array_equal(pts, ball_points(3, 200, 5.0))
    assert ball_points(1, 10, 1.0).shape == (10, 1)


@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.lists(st.floats(0.2, 3), min_size=2, max_size=2),
       st.floats(-2, 2), st.tuples(st.floats(-5, 5), st.floats(-5, 5)))
@settings(max_examples=60, deadline=None)
def test_finite_difference_matches_analytic_quadratic(a, p, t, x):
    A = np.array(a).reshape(2, 2).tolist()
    P = np.diag(p)
    V = compile_scalar(parse_expr(f"{p[0]!r}*x1^2 + {p[1]!r}*x2^2", 2), 2)
    f = compile_vector([parse_expr(f"{A[0][0]!r}*x1 + {A[0][1]!r}*x2", 2),
                        parse_expr(f"{A[1][0]!r}*x1 + {A[1][1]!r}*x2", 2)], 2)
    A = np.array(A)
    xv = np.array(x)
    exact = float(xv @ (A.T @ P + P @ A) @ xv)
    got = lyapunov_derivative(V, f, t, x)
    assert abs(got - exact) <= 1e-5 * (abs(exact) + float(xv @ P @ xv) + 1e-12) + 1e-9


# --------------------------------------------------------------- pathwise

def test_pathwise_zero_state(semi):
    path = sample_path(semi.law, 0.0, 5.0, substream(0, PATHS, 0))
    traj = integrate(semi.dynamics, path, [0.0, 0.0], 1e-2)
    assert pathwise_bound_check(traj, semi.lyapunov).passed


def test_pathwise_single_mode_closed_form():
    spec = LyapunovSpec.from_strings(2, ["0.5*(x1^2+x2^2)"], ["-2"], [1.0], 0.5, 2, 0.5, 2)
    dyn = ModeDynamics.from_strings(["-2*x1 + x2", "x1 - 2*x2"])
    path = SwitchingPath(0.0, 4.0, np.array([]), np.array([0]), 1)
    traj = integrate([dyn], path, [1.0, -1.0], 1e-3)
    ln_b = log_bound_series(traj, spec)
    # Gronwall form: ln V(0) - 2t
    np.testing.assert_allclose(ln_b, math.log(1.0) - 2 * traj.times, atol=1e-9)
    assert pathwise_bound_check(traj, spec).passed


def test_pathwise_detects_wrong_rate():
    spec = LyapunovSpec.from_strings(2, ["0.5*(x1^2+x2^2)"], ["-4"], [1.0], 0.5, 2, 0.5, 2)
    dyn = ModeDynamics.from_strings(["-2*x1 + x2", "x1 - 2*x2"])
    path = SwitchingPath(0.0, 2.0, np.array([]), np.array([0]), 1)
    traj = integrate([dyn], path, [1.0, 1.0], 1e-3)
    assert not pathwise_bound_check(traj, spec).passed


def test_pathwise_example_runs(semi):
    spec = semi.lyapunov
    for r in range(5):
        path = sample_path(semi.law, 0.0, 20.0, substream(semi.seed, PATHS, r))
        traj = integrate(semi.dynamics, path, semi.sim.x0, 1e-3)
        rep = pathwise_bound_check(traj, spec)
        assert rep.passed, rep.to_text()
        assert counts_consistent(traj, log_bound_series(traj, spec), spec)


@st.composite
def linear_scenarios(draw):
    """Linear modes x' = A_i x with V_i = x' P_i x and the exact best rates and jump factors."""
    seed = draw(st.integers(0, 2**32))
    g = np.random.default_rng(seed)
    n_modes = 2
    As = [g.uniform(-2.0, 1.0, (2, 2)) for _ in range(n_modes)]
    Ps = [np.diag(g.uniform(0.5, 2.0, 2)) for _ in range(n_modes)]
    lams, mus = [], []
    for A, P in zip(As, Ps):
        R = np.diag(1 / np.sqrt(np.diag(P)))
        lams.append(float(np.max(np.linalg.eigvalsh(R @ (A.T @ P + P @ A) @ R))) + 1e-9)
    for i in range(n_modes):
        mus.append(max([1.0] + [float(np.max(np.diag(Ps[i]) / np.diag(Ps[j]))) * (1 + 1e-12)
                                for j in range(n_modes) if j != i]))
    c1 = min(float(np.diag(P).min()) for P in Ps)
    c2 = max(float(np.diag(P).max()) for P in Ps)
    Ps = [P.tolist() for P in Ps]
    As = [A.tolist() for A in As]
    spec = LyapunovSpec.from_strings(
        2, [f"{P[0][0]!r}*x1^2 + {P[1][1]!r}*x2^2" for P in Ps], [repr(l) for l in lams], mus, c1, 2, c2, 2)
    dyn = [ModeDynamics.from_strings([f"{A[0][0]!r}*x1 + {A[0][1]!r}*x2", f"{A[1][0]!r}*x1 + {A[1][1]!r}*x2"])
           for A in As]
    return spec, dyn, seed


@given(linear_scenarios())
@settings(max_examples=15, deadline=None)
def test_pathwise_never_fails_when_conditions_hold(case):
    spec, dyn, seed = case
    samples = default_samples(2, (0.0, 5.0), 5, 3.0, 64)
    assert all(check_derivative_condition(spec, d, i, samples).passed for i, d in enumerate(dyn))
    assert check_jump_condition(spec, samples).passed
    law = SemiMarkov([[0, 1], [1, 0]], (Uniform(0.1, 1.0), Uniform(0.2, 0.8)))
    path = sample_path(law, 0.0, 5.0, substream(seed, PATHS, 0))
    traj = integrate(dyn, path, [1.0, -0.5], 1e-3)
    assert pathwise_bound_check(traj, spec).passed
