"""Command-line front end: ``randswitch <subcommand> [options]``.

Exit status is 0 on success, 1 for invalid input (bad flags, scenario
validation, unwritable output directory) and 2 for runtime failures,
including a ``reproduce-example1`` threshold that is not met.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import criteria as crit
from . import rng as rngmod
from .dynamics import NonFiniteStateError, integrate, trajectory_norms
from .ensemble import run_ensemble
from .lyapunov import (check_derivative_condition, check_jump_condition, check_sandwich, default_samples,
                       pathwise_bound_check)
from .musf import MonteCarlo, classify, default_t_grid
from .outputs import header, package_version, write_csv, write_text
from .scenario import ScenarioError, ScenarioSpec, load_scenario, shipped_path
from .switching import (Deterministic, Exponential, Gamma, Markov, Renewal, SemiMarkov, SwitchingError,
                        Uniform, embedded_stationary, occupancy_series, sample_path)

log = logging.getLogger("randswitch")

DEFAULT_OUT = "randswitch_out"
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers

class Run:
    """Per-invocation context: output directory, seed and the manifest lines."""

    def __init__(self, args, scenarios: list[ScenarioSpec]):
        self.args = args
        self.scenarios = scenarios
        self.seed = scenarios[0].seed if args.seed is None else args.seed
        self.out = _output_dir(args.out)
        self.written: list[str] = []

    @property
    def head(self) -> list[str]:
        return header(self.scenarios, self.seed)

    def csv(self, name, columns, rows):
        write_csv(self.out / name, self.head, columns, rows)
        self.written.append(name)

    def text(self, name, body):
        write_text(self.out / name, self.head, body)
        self.written.append(name)

    def manifest(self, command: str, with_out: bool = True) -> str:
        lines = [f"command: {command}", f"randswitch: {package_version()}", f"seed: {self.seed}",
                 f"generator: {rngmod.generator_identity()}"]
        for s in self.scenarios:
            lines.append(f"scenario: {s.name} ({s.source}) sha256={s.sha256}")
        if with_out:
            lines.append(f"output: {self.out}")
        return "\n".join(lines)


def _output_dir(flag) -> Path:
    out = Path(flag or os.environ.get("RANDSWITCH_OUT") or DEFAULT_OUT)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return conv


def parse_dwell(text: str):
    """``uniform:a:b``, ``deterministic:d``, ``exponential:rate`` or ``gamma:shape:scale``."""
    name, *params = text.split(":")
    makers = {"uniform": (Uniform, 2), "deterministic": (Deterministic, 1), "exponential": (Exponential, 1),
              "gamma": (Gamma, 2)}
    if name not in makers or len(params) != makers[name][1]:
        raise argparse.ArgumentTypeError(f"bad dwell {text!r}; e.g. uniform:1.5:4.5 or exponential:0.5")
    try:
        return makers[name][0](*(float(p) for p in params))
    except (ValueError, SwitchingError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _fmt(v: float) -> str:
    return f"{v:.6g}" if math.isfinite(v) else str(v)


def _trajectory_rows(traj):
    norms = trajectory_norms(traj)
    for t, m, x, nrm in zip(traj.times.tolist(), traj.modes.tolist(), traj.states.tolist(), norms.tolist()):
        yield (t, m + 1, *x, nrm)


def _sim_params(args, s: ScenarioSpec):
    return (s.sim.horizon if args.horizon is None else args.horizon,
            s.sim.step if args.step is None else args.step)


# -------------------------------------------------------------- subcommands

def cmd_simulate(args, run: Run) -> int:
    s = run.scenarios[0]
    horizon, step = _sim_params(args, s)
    path = sample_path(s.law, s.sim.t0, horizon, rngmod.substream(run.seed, rngmod.PATHS, 0))
    run.csv("path.csv", ("k", "t_k", "mode"), path.to_csv_rows())
    traj = integrate(s.dynamics, path, s.sim.x0, step)
    cols = ("t", "mode", *(f"x{k + 1}" for k in range(s.dim)), "norm")
    run.csv("trajectory.csv", cols, _trajectory_rows(traj))
    norms = trajectory_norms(traj)
    print(f"switches: {len(path.times) - 1}; grid points: {len(traj.times)}")
    print(f"|x(t0)| = {_fmt(norms[0])}, |x(t_end)| = {_fmt(norms[-1])}")
    return EXIT_OK


def _ensemble_outputs(run: Run, stats) -> list[str]:
    run.csv("ensemble_summary.csv", ("rep", "terminal_norm", "sup_norm", "lyap_slope", "lyap_endpoint", "aborted"),
            (r.to_csv_row() for r in stats.replications))
    run.csv("mean_square.csv", ("t", "ms"), stats.mean_square_rows())
    m = stats.occupancy.shape[1]
    run.csv("occupancy.csv", ("t", *(f"occ_{i + 1}" for i in range(m))), stats.occupancy_rows())
    done = stats.completed
    collapsed = sum(r.collapsed_at is not None for r in done)
    neg = sum(r.lyap_slope < 0 for r in done)
    return [f"replications: {stats.n} ({stats.n_aborted} aborted, {collapsed} decayed to exact zero)",
            f"median terminal |x|: {_fmt(float(np.median([r.terminal_norm for r in done])) if done else math.nan)}",
            f"max sup |x| for t >= {stats.sup_from:g}: "
            f"{_fmt(max((r.sup_norm for r in done), default=math.nan))}",
            f"negative Lyapunov slope: {neg}/{len(done)}",
            f"mean square at t = {stats.grid[-1]:g}: {_fmt(float(stats.ms[-1]))}",
            f"occupancy error at t = {stats.grid[-1]:g}: {_fmt(float(stats.occupancy_error[-1]))}"]


def cmd_ensemble(args, run: Run) -> int:
    s = run.scenarios[0]
    horizon, step = _sim_params(args, s)
    stats = run_ensemble(s, args.reps or 100, run.seed, horizon, step)
    print("\n".join(_ensemble_outputs(run, stats)))
    return EXIT_OK


def _samples(s: ScenarioSpec):
    a = s.analysis
    return default_samples(s.dim, a.sample_t[:2], a.sample_t[2], a.sample_radius, a.sample_states)


def _condition_reports(s: ScenarioSpec):
    spec = s.lyapunov
    samples = _samples(s)
    reports = [check_sandwich(spec, samples)]
    reports += [check_derivative_condition(spec, d, i, samples) for i, d in enumerate(s.dynamics)]
    reports.append(check_jump_condition(spec, samples))
    return reports


def _violation_columns(dim):
    return ("condition", "mode", "other_mode", "t", *(f"x{k + 1}" for k in range(dim)), "lhs", "rhs")


def cmd_check_lyapunov(args, run: Run) -> int:
    s = run.scenarios[0]
    reports = _condition_reports(s)
    reps = args.reps or 0
    if reps:
        horizon, step = _sim_params(args, s)
        spec = s.lyapunov
        rows = []

        def on_traj(r, traj):
            rep = pathwise_bound_check(traj, spec)
            rows.append((r, rep.samples, len(rep.violations), rep.worst_margin))
            reports.append(rep)
        run_ensemble(s, reps, run.seed, horizon, step, on_trajectory=on_traj)
        run.csv("pathwise.csv", ("rep", "samples", "violations", "worst_margin"), rows)
    run.csv("lyapunov_violations.csv", _violation_columns(s.dim), (row for r in reports for row in r.to_csv_rows()))
    body = "\n".join(r.to_text() for r in reports)
    run.text("lyapunov_report.txt", body)
    print(body)
    bad = sum(len(r.violations) for r in reports)
    print(f"total violations: {bad}")
    return EXIT_OK


def _musf_estimates(run: Run, s: ScenarioSpec, modes, dwell_override=None, samples=None):
    a = s.analysis
    grid = default_t_grid(a.t_max, a.t_points)
    out = {}
    for i in modes:
        dwell = dwell_override or s.law.dwell_model(i)
        mc = MonteCarlo(samples or a.mc_samples, run.seed, i)
        cls = classify(s.lam_expr(i), dwell, grid, mc)
        run.csv(f"musf_mode{i + 1}.csv", ("t", "mean", "std_error", "samples"), cls.evidence.to_csv_rows())
        out[i] = (dwell, cls)
    return out


def _musf_table(s: ScenarioSpec, est) -> str:
    stated = s.analytic_bounds
    lines = [f"{'mode':>4}  {'dwell':<28}  {'E[S]':>6}  {'stated':>9}  {'estimate':>10}  {'mc_tol':>8}  "
             f"{'lam_bar':>9}  {'argmax_t':>9}  verdict"]
    for i, (dwell, c) in est.items():
        k = int(np.argmax(c.evidence.upper))
        tol = 3.0 * float(c.evidence.std_error[k])
        st = _fmt(stated.values[i]) if stated else "-"
        lines.append(f"{i + 1:>4}  {str(dwell):<28}  {dwell.mean():>6.3g}  {st:>9}  {c.M_hat:>10.6g}  "
                     f"{tol:>8.2g}  {c.lam_bar:>9.5g}  {c.argmax_t:>9.4g}  {c.verdict}")
    lines.append("estimate = max over start times of mean + 3 std_error; mc_tol = 3 std_error at the maximizer")
    if stated:
        lines.append(f"stated = analytic bound from the scenario (kind {stated.kinds[0]})")
    for i, (_, c) in est.items():
        for note in c.notes[2:]:
            lines.append(f"mode {i + 1}: {note}")
    return "\n".join(lines)


def cmd_estimate_musf(args, run: Run) -> int:
    s = run.scenarios[0]
    if args.mode is not None and not 1 <= args.mode <= s.n_modes:
        raise UsageError(f"--mode must be in 1..{s.n_modes}")
    modes = [args.mode - 1] if args.mode else range(s.n_modes)
    est = _musf_estimates(run, s, modes, args.dwell, args.samples)
    table = _musf_table(s, est)
    run.text("musf_report.txt", table)
    print(table)
    return EXIT_OK


def _criterion(s: ScenarioSpec, bounds: crit.ModeBounds) -> crit.CriterionReport:
    law = s.law
    if isinstance(law, SemiMarkov):
        if bounds.single_kind() is None:
            return crit.mixed_criterion(bounds, law.stationary(), law.mean_dwell())
        return crit.semi_markov_criterion(bounds, law.stationary(), law.mean_dwell())
    if isinstance(law, Markov):
        return crit.markov_criterion(bounds, law.stationary(), law.exit_rates)
    if isinstance(law, Renewal):
        return crit.renewal_criterion(bounds, law.p, law.theta)
    raise TypeError(type(law))


def _criteria_text(s: ScenarioSpec, rep: crit.CriterionReport, caveats=()) -> str:
    lines = [rep.to_text()]
    lines += list(caveats)
    if rep.certified and not caveats:
        p1 = s.envelopes[1]
        lines.append(f"exponent bound: limsup (1/t) ln|x(t)| <= {crit.ges_exponent_bound(rep, p1):.6f}")
    elif caveats:
        lines.append("verdict: inconclusive (some bound is not uniform on the sampled grid)")
    return "\n".join(lines)


def cmd_criteria(args, run: Run) -> int:
    s = run.scenarios[0]
    caveats = []
    if args.bounds == "paper":
        if s.analytic_bounds is None:
            raise UsageError(f"scenario {s.name} has no analytic_bounds; use --bounds estimated")
        bounds = s.analytic_bounds
    else:
        est = _musf_estimates(run, s, range(s.n_modes), samples=args.samples)
        bounds = crit.ModeBounds.uniform(crit.M, [c.M_hat for _, c in est.values()], s.mu)
        for i, (_, c) in est.items():
            if c.verdict == "UNCLASSIFIED":
                caveats.append(f"mode {i + 1}: estimate grows along the start-time grid; no uniform bound")
    rep = _criterion(s, bounds)
    run.csv("criteria.csv", ("criterion", "mode", "kind", "bound", "weight", "term"), rep.to_csv_rows())
    text = _criteria_text(s, rep, caveats)
    run.text("criteria.txt", text)
    print(text)
    return EXIT_OK


# ------------------------------------------------------------ reproduction

def load_manifest(path=None) -> dict:
    p = Path(path) if path else shipped_path("example1_manifest")
    with open(p, encoding="utf-8") as fh:
        return yaml.safe_load(fh)


def cmd_reproduce(args, run: Run) -> int:
    man = run.manifest_data
    semi, markov = run.scenarios
    results: list[tuple[bool, str]] = []

    def check(ok: bool, label: str):
        results.append((bool(ok), label))
        print(f"{'PASS' if ok else 'FAIL'}  {label}", flush=True)

    # stationary distributions
    st = man["stationary"]
    pi_bar = embedded_stationary(semi.law.P)
    got = {"embedded": pi_bar, "semi_markov": semi.law.stationary(), "markov": markov.law.stationary()}
    rows = [(k, i + 1, float(v)) for k, vec in got.items() for i, v in enumerate(vec)]
    run.csv("stationary.csv", ("law", "mode", "probability"), rows)
    for k, vec in got.items():
        err = float(np.max(np.abs(vec - np.array(st[k]))))
        check(err <= st["tol"], f"stationary {k} = {np.round(vec, 12).tolist()} (max error {err:.2g})")

    # criteria with the analytic bounds
    cr = man["criteria"]
    for key, s in (("semi_markov", semi), ("markov", markov)):
        rep = _criterion(s, s.analytic_bounds)
        run.csv(f"criteria_{key}.csv", ("criterion", "mode", "kind", "bound", "weight", "term"), rep.to_csv_rows())
        run.text(f"criteria_{key}.txt", _criteria_text(s, rep))
        check(abs(rep.value - cr[key]) <= cr["tol"] and rep.certified,
              f"criterion {rep.criterion} = {rep.value:.6f} (target {cr[key]} +/- {cr['tol']})")

    # Lyapunov conditions on the sampled region
    reports = _condition_reports(semi)
    run.csv("lyapunov_violations.csv", _violation_columns(semi.dim),
            (row for r in reports for row in r.to_csv_rows()))
    run.text("lyapunov_report.txt", "\n".join(r.to_text() for r in reports))
    for r in reports:
        check(len(r.violations) <= man["lyapunov"]["max_violations"],
              f"condition {r.condition}: {len(r.violations)} violations in {r.samples} checks")

    # stable-function estimates
    ms = man["musf"]
    est = _musf_estimates(run, semi, range(semi.n_modes))
    run.text("musf_report.txt", _musf_table(semi, est))
    dwell, c2 = est[ms["mode"] - 1]
    k = int(np.argmax(c2.evidence.upper))
    tol = 3.0 * float(c2.evidence.std_error[k])
    stated = semi.analytic_bounds.values[ms["mode"] - 1]
    check(c2.M_hat <= ms["jensen_bound"] + 2.0 * tol,
          f"mode {ms['mode']} mean window integral: estimate {c2.M_hat:.6g} vs stated {stated:g} "
          f"(Jensen bound {ms['jensen_bound']})")

    # ensemble with the pathwise bound
    en = man["ensemble"]
    reps = args.reps or en["reps"]
    horizon, step = _sim_params(args, semi)
    spec = semi.lyapunov
    prow = []

    def on_traj(r, traj):
        rep = pathwise_bound_check(traj, spec, en["pathwise_tol"])
        prow.append((r, rep.samples, len(rep.violations), rep.worst_margin))
    stats = run_ensemble(semi, reps, run.seed, horizon, step, on_trajectory=on_traj)
    run.csv("pathwise.csv", ("rep", "samples", "violations", "worst_margin"), prow)
    summary = _ensemble_outputs(run, stats)
    run.text("ensemble_report.txt", "\n".join(summary))
    n_viol = sum(p[2] for p in prow)
    check(n_viol <= en["max_pathwise_violations"] and stats.n_aborted == 0,
          f"pathwise bound: {n_viol} violations over {len(prow)} replications")
    good = sum(r.terminal_norm < en["terminal_norm"] and r.lyap_slope < 0 for r in stats.completed)
    need = math.ceil(en["min_converged"] * reps / en["reps"])
    check(good >= need, f"{good}/{reps} replications with terminal |x| < {en['terminal_norm']:g} "
                        f"and negative Lyapunov slope (need {need})")
    check(stats.ms[-1] < en["mean_square_at_end"],
          f"mean square at t = {stats.grid[-1]:g}: {stats.ms[-1]:.3g} (< {en['mean_square_at_end']:g})")

    # long-run occupancy, switching only
    oc = man["occupancy"]
    orows = []
    for key, s in (("semi_markov", semi), ("markov", markov)):
        T = s.analysis.occupancy_horizon
        path = sample_path(s.law, s.sim.t0, T, rngmod.substream(run.seed, rngmod.PATHS, 10**6))
        occ = occupancy_series(path, [s.sim.t0 + T])[0]
        pi = s.law.stationary()
        orows += [(key, i + 1, float(o), float(p)) for i, (o, p) in enumerate(zip(occ, pi))]
        err = float(np.max(np.abs(occ - pi)))
        check(err <= oc["tol"], f"occupancy ({key}) at t = {T:g}: max |occ - pi| = {err:.4f}")
    run.csv("occupancy_long.csv", ("law", "mode", "occupancy", "pi"), orows)

    failed = [label for ok, label in results if not ok]
    body = "\n".join(f"{'PASS' if ok else 'FAIL'}  {label}" for ok, label in results)
    run.text("acceptance.txt", body)
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_RUNTIME


# ------------------------------------------------------------------- main

COMMANDS = {
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "check-lyapunov": cmd_check_lyapunov,
    "estimate-musf": cmd_estimate_musf,
    "criteria": cmd_criteria,
    "reproduce-example1": cmd_reproduce,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--scenario", help="scenario file or shipped name (e.g. example1_semimarkov)")
    common.add_argument("--out", help="output directory (default: $RANDSWITCH_OUT or ./randswitch_out)")
    common.add_argument("--seed", type=_seed, help="master seed (default: the scenario's)")
    common.add_argument("--reps", type=_positive(int), help="number of replications")
    common.add_argument("--horizon", type=_positive(float), help="simulation horizon in seconds")
    common.add_argument("--step", type=_positive(float), help="integration step in seconds")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="randswitch", description="Randomly switched time-varying systems: simulation, "
                                                    "Lyapunov checks, stable-function estimates, criteria.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    sub.add_parser("simulate", parents=[common], help="one switching path and trajectory")
    sub.add_parser("ensemble", parents=[common], help="replicated simulation statistics")
    sub.add_parser("check-lyapunov", parents=[common], help="sampled Lyapunov-function conditions")
    p = sub.add_parser("estimate-musf", parents=[common], help="mean window integrals of the rates")
    p.add_argument("--mode", type=_positive(int), help="1-based mode (default: all)")
    p.add_argument("--dwell", type=parse_dwell, help="dwell law override, e.g. uniform:1.5:4.5")
    p.add_argument("--samples", type=_positive(int), help="Monte Carlo samples per start time")
    p = sub.add_parser("criteria", parents=[common], help="closed-form stability criteria")
    p.add_argument("--bounds", choices=("paper", "estimated"), default="paper",
                   help="analytic bounds from the scenario, or grid estimates")
    p.add_argument("--samples", type=_positive(int), help="Monte Carlo samples for --bounds estimated")
    p = sub.add_parser("reproduce-example1", parents=[common], help="full pipeline with acceptance thresholds")
    p.add_argument("--manifest", help="threshold file (default: the bundled one)")
    return parser


def dispatch(argv) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    for name in ("mode", "dwell", "samples", "bounds", "manifest"):
        if not hasattr(args, name):
            setattr(args, name, None)
    if args.command == "reproduce-example1":
        manifest = load_manifest(args.manifest)
        names = manifest["scenarios"]
        scenarios = [load_scenario(args.scenario or names["semi_markov"]), load_scenario(names["markov"])]
    else:
        if not args.scenario:
            raise UsageError(f"{args.command} needs --scenario")
        scenarios = [load_scenario(args.scenario)]
        manifest = None
    run = Run(args, scenarios)
    run.manifest_data = manifest
    print(run.manifest(args.command))
    print()
    status = COMMANDS[args.command](args, run)
    run.text("manifest.txt", run.manifest(args.command, with_out=False) + "\nfiles: " + ", ".join(sorted(run.written)))
    return status


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return dispatch(argv)
    except (UsageError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NonFiniteStateError, ArithmeticError, RuntimeError, OSError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
