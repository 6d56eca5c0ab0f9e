"""End-to-end acceptance checks for the Example-1 reference scenarios.

Each test prints one ``PASS``/``FAIL`` line (visible with or without ``-s``).
"""
import math
from dataclasses import replace

import numpy as np
import pytest

from randswitch import criteria as crit
from randswitch.cli import main
from randswitch.ensemble import run_ensemble
from randswitch.exprlang import parse_expr
from randswitch.lyapunov import check_derivative_condition, check_jump_condition, check_sandwich, \
    default_samples, pathwise_bound_check
from randswitch.musf import mean_integral, quad
from randswitch.rng import PATHS, substream
from randswitch.switching import Deterministic, ctmc_stationary, embedded_stationary, occupancy_series, \
    sample_path, semi_markov_stationary

from test_musf import CORPUS, LAM2


@pytest.fixture
def verdict(capsys):
    def emit(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[acceptance {number:>2}] {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def test_01_stationary_distributions(semi, markov, verdict):
    got = [embedded_stationary(semi.law.P), semi_markov_stationary([0.4, 0.4, 0.2], [1, 3, 2]),
           ctmc_stationary(markov.law.Q)]
    want = [[0.4, 0.4, 0.2], [0.2, 0.6, 0.2], [0.6, 0.2, 0.2]]
    err = max(float(np.max(np.abs(g - np.array(w)))) for g, w in zip(got, want))
    verdict(1, err <= 1e-10, f"stationary distributions, max error {err:.2g}")


def test_02_criterion_values(semi, markov, verdict):
    b = crit.ModeBounds.uniform(crit.PHI, [-2, -7, 5], [1.01, 2, 2])
    s = crit.semi_markov_criterion(b, semi.law.stationary(), semi.law.mean_dwell())
    m = crit.markov_criterion(b, markov.law.stationary(), markov.law.exit_rates)
    ok = abs(s.value + 1.090) <= 1e-3 and abs(m.value + 4.018) <= 1e-3
    verdict(2, ok, f"semi-Markov {s.value:.6f}, Markov {m.value:.6f}")


def _condition_violations(spec, dyn, samples):
    reports = [check_sandwich(spec, samples), check_jump_condition(spec, samples)]
    reports += [check_derivative_condition(spec, d, i, samples) for i, d in enumerate(dyn)]
    return sum(len(r.violations) for r in reports)


def test_03_lyapunov_conditions(semi, verdict):
    samples = default_samples(2)
    assert len(samples) == 33 * 512
    spec, dyn = semi.lyapunov, semi.dynamics
    base = _condition_violations(spec, dyn, samples)
    lam1 = _condition_violations(replace(spec, lam=(parse_expr("-3", 2), *spec.lam[1:])), dyn, samples)
    mu2 = _condition_violations(replace(spec, mu=(spec.mu[0], 1.5, spec.mu[2])), dyn, samples)
    ok = base == 0 and lam1 >= 1 and mu2 >= 1
    verdict(3, ok, f"violations: reference {base}, lambda_1 = -3 {lam1}, mu_2 = 1.5 {mu2}")


def test_04_quadrature_oracle(verdict):
    worst = max(abs(quad(parse_expr(src, 1), a, b) - exact) for src, a, b, exact in CORPUS)
    est = mean_integral(parse_expr(LAM2, 1), Deterministic(3.0), [0.0])
    ok = worst <= 1e-9 and abs(est.mean[0] + 26.858880) <= 1e-7 and est.std_error[0] == 0.0
    verdict(4, ok, f"corpus max error {worst:.2g}; Deterministic(3) on lambda_2 = {est.mean[0]:.7f} "
                   f"(std error {est.std_error[0]})")


@pytest.fixture(scope="module")
def reference_ensemble(semi):
    spec = semi.lyapunov
    pathwise = []
    stats = run_ensemble(semi, 100, semi.seed, horizon=20.0, step=1e-3,
                         on_trajectory=lambda r, traj: pathwise.append(pathwise_bound_check(traj, spec, 1e-4)))
    return stats, pathwise


def test_05_pathwise_bound(semi, reference_ensemble, verdict):
    stats, pathwise = reference_ensemble
    assert semi.sim.x0 == (1.0, -1.0)
    n_viol = sum(len(r.violations) for r in pathwise)
    ok = len(pathwise) == 100 and n_viol == 0
    verdict(5, ok, f"{n_viol} pathwise violations over {len(pathwise)} replications "
                   f"({sum(r.samples for r in pathwise)} grid points)")


def test_06_empirical_stability(reference_ensemble, verdict):
    stats, _ = reference_ensemble
    good = sum(r.terminal_norm < 1e-2 and r.lyap_slope < 0 for r in stats.completed)
    ms_end = float(stats.ms[-1])
    ok = good >= 99 and ms_end < 1e-4 and math.isclose(stats.grid[-1], 20.0)
    verdict(6, ok, f"{good}/100 converged with negative slope; mean square at t = 20 is {ms_end:.3g}")


def test_07_ergodic_occupancy(semi, markov, verdict):
    errs = []
    for s in (semi, markov):
        path = sample_path(s.law, 0.0, 1e4, substream(s.seed, PATHS, 10**6))
        occ = occupancy_series(path, [1e4])[0]
        errs.append(float(np.max(np.abs(occ - s.law.stationary()))))
    verdict(7, max(errs) <= 0.02, f"occupancy error semi-Markov {errs[0]:.4f}, Markov {errs[1]:.4f}")


def test_08_markov_semi_markov_consistency(verdict):
    gen = np.random.default_rng(8)
    worst = 0.0
    for _ in range(1000):
        n = int(gen.integers(1, 7))
        kind = crit.KINDS[int(gen.integers(3))]
        b = crit.ModeBounds.uniform(kind, gen.uniform(-10, 10, n).tolist(), gen.uniform(1, 5, n).tolist())
        pi = gen.dirichlet(np.ones(n))
        q = gen.uniform(0.1, 10, n)
        mk = crit.markov_criterion(b, pi, q).value
        sm = crit.semi_markov_criterion(b, pi, 1.0 / q).value
        worst = max(worst, abs(mk - sm))
    verdict(8, worst <= 1e-12, f"max |markov - semi-Markov with m = 1/q| over 1000 inputs: {worst:.2g}")


@pytest.mark.parametrize("dwell", ["uniform:1.5:4.5", "deterministic:3", "exponential:0.3333333333333333",
                                   "gamma:3:1"])
def test_09_discrepancy_report(tmp_path, capsys, verdict, dwell):
    code = main(["estimate-musf", "--scenario", "example1_semimarkov", "--mode", "2", "--dwell", dwell,
                 "--out", str(tmp_path)])
    out = capsys.readouterr().out
    row = next(line for line in out.splitlines() if line.strip().startswith("2 ")).split()
    stated, estimate, tol = row[-6], float(row[-5]), float(row[-4])
    ok = code == 0 and stated == "-7" and estimate <= -25 + 2 * tol
    verdict(9, ok, f"{dwell}: stated {stated} vs estimate {estimate:.6g} (mc tol {tol:.2g})")


def test_10_reproduce_determinism(tmp_path, capsys, verdict):
    dirs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["reproduce-example1", "--seed", "2024", "--out", str(d)]) for d in dirs]
    capsys.readouterr()
    names = sorted(p.name for p in dirs[0].glob("*.csv"))
    same = names == sorted(p.name for p in dirs[1].glob("*.csv")) and all(
        (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes() for n in names)
    ok = codes == [0, 0] and same and len(names) >= 10
    verdict(10, ok, f"exit codes {codes}; {len(names)} CSV files byte-identical: {same}")
