"""Numerical checks of indefinite multiple Lyapunov function conditions.

Conditions are inequalities over an unbounded region, so they are checked by
sampling: a clean report means "no counterexample in the sampled region".
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm, qmc

from .dynamics import ModeDynamics, Trajectory
from .exprlang import Expr, compile_scalar, free_vars, parse_expr
from .musf import QUAD_TOL, _as_function, _quad_fn
from .switching import path_counts

SANDWICH = "sandwich"
DERIVATIVE = "derivative"
JUMP = "jump"
PATHWISE = "pathwise"

REL_TOL = 1e-12
FD_STEP = 1e-6
PATHWISE_TOL = 1e-4


@dataclass(frozen=True)
class LyapunovSpec:
    """Per-mode V_i(t, x), rates lam_i(t), jump factors mu_i and monomial envelopes.

    ``alpha1(s) = c1 * s**p1`` and ``alpha2(s) = c2 * s**p2``.
    """

    dim: int
    V: tuple[Expr, ...]
    lam: tuple[Expr, ...]
    mu: tuple[float, ...]
    c1: float
    p1: float
    c2: float
    p2: float

    def __post_init__(self):
        if not (len(self.V) == len(self.lam) == len(self.mu)):
            raise ValueError("V, lambda and mu need one entry per mode")
        for i, m in enumerate(self.mu):
            if not m >= 1.0:
                raise ValueError(f"mu_{i + 1} = {m} must be >= 1")
        if not all(v > 0 for v in (self.c1, self.p1, self.c2, self.p2)):
            raise ValueError("envelope constants c1, p1, c2, p2 must be positive")
        for i, lam in enumerate(self.lam):
            if free_vars(lam) - {"t"}:
                raise ValueError(f"lambda_{i + 1} may only depend on t")

    @classmethod
    def from_strings(cls, dim: int, V: Sequence[str], lam: Sequence[str], mu: Sequence[float],
                     c1: float, p1: float, c2: float, p2: float) -> "LyapunovSpec":
        return cls(dim, tuple(parse_expr(v, dim) for v in V), tuple(parse_expr(s, dim) for s in lam),
                   tuple(float(m) for m in mu), c1, p1, c2, p2)

    @property
    def n_modes(self) -> int:
        return len(self.V)

    def alpha1(self, s: float) -> float:
        return self.c1 * s ** self.p1

    def alpha2(self, s: float) -> float:
        return self.c2 * s ** self.p2

    def V_functions(self):
        return [compile_scalar(v, self.dim) for v in self.V]


@dataclass(frozen=True)
class Violation:
    mode: int
    t: float
    x: tuple[float, ...]
    lhs: float
    rhs: float
    other_mode: int | None = None


@dataclass
class ConditionReport:
    condition: str
    samples: int
    violations: list[Violation] = field(default_factory=list)
    worst_margin: float = -math.inf
    region: str = ""

    @property
    def passed(self) -> bool:
        return not self.violations

    def record(self, margin: float, violation: Violation) -> None:
        if margin > self.worst_margin:
            self.worst_margin = margin
        if margin > 0:
            self.violations.append(violation)

    def to_text(self) -> str:
        status = "PASS" if self.passed else f"FAIL ({len(self.violations)} violations)"
        lines = [f"[{self.condition}] {status}; {self.samples} checks; worst margin {self.worst_margin:.6g}"]
        if self.region:
            lines.append(f"    region: {self.region}")
        for v in self.violations[:5]:
            pair = f"->{v.other_mode + 1}" if v.other_mode is not None else ""
            lines.append(f"    mode {v.mode + 1}{pair} t={v.t:.6g} x={list(v.x)} lhs={v.lhs:.6g} rhs={v.rhs:.6g}")
        if len(self.violations) > 5:
            lines.append(f"    ... {len(self.violations) - 5} more")
        return "\n".join(lines)

    def to_csv_rows(self):
        for v in self.violations:
            other = "" if v.other_mode is None else v.other_mode + 1
            yield (self.condition, v.mode + 1, other, v.t, *v.x, v.lhs, v.rhs)


@dataclass(frozen=True)
class SampleSet:
    ts: np.ndarray
    xs: np.ndarray  # shape (K, n)
    region: str = ""

    def __iter__(self):
        for t in self.ts:
            for x in self.xs:
                yield float(t), x

    def __len__(self):
        return len(self.ts) * len(self.xs)


def ball_points(dim: int, count: int, radius: float) -> np.ndarray:
    """Deterministic quasi-random points filling the ball of ``radius`` (Halton, unscrambled)."""
    h = qmc.Halton(d=dim + 1, scramble=False).random(count + 1)[1:]
    h = np.clip(h, 1e-12, 1 - 1e-12)
    if dim == 1:
        direction = np.where(h[:, :1] < 0.5, -1.0, 1.0)
    else:
        g = norm.ppf(h[:, :dim])
        direction = g / np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * h[:, dim] ** (1.0 / dim)
    return direction * r[:, None]


def default_samples(dim: int, t_range=(0.0, 20.0), n_t: int = 33, radius: float = 10.0,
                    n_x: int = 512) -> SampleSet:
    ts = np.linspace(t_range[0], t_range[1], n_t)
    xs = ball_points(dim, n_x, radius)
    region = f"t in [{t_range[0]:g}, {t_range[1]:g}] ({n_t} points) x |x| <= {radius:g} ({n_x} points)"
    return SampleSet(ts, xs, region)


def as_samples(samples) -> SampleSet:
    if isinstance(samples, SampleSet):
        return samples
    pairs = list(samples)
    if not pairs:
        raise ValueError("need at least one sample")
    # arbitrary (t, x) pairs: one t per x, no mesh
    return _PairSet(pairs)


class _PairSet(SampleSet):
    def __init__(self, pairs):
        object.__setattr__(self, "pairs", [(float(t), np.asarray(x, float)) for t, x in pairs])
        object.__setattr__(self, "region", f"{len(pairs)} explicit samples")

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self):
        return len(self.pairs)


# ------------------------------------------------------------------- checks

def check_sandwich(spec: LyapunovSpec, samples) -> ConditionReport:
    """alpha1(|x|) <= V_i(t, x) <= alpha2(|x|) for every mode and sample."""
    samples = as_samples(samples)
    Vs = spec.V_functions()
    rep = ConditionReport(SANDWICH, 0, region=samples.region)
    for t, x in samples:
        s = math.hypot(*x)
        lo, hi = spec.alpha1(s), spec.alpha2(s)
        for i, V in enumerate(Vs):
            v = V(t, x)
            rep.samples += 2
            xt = tuple(float(c) for c in x)
            rep.record(lo - v - REL_TOL * max(abs(lo), abs(v)), Violation(i, t, xt, lo, v))
            rep.record(v - hi - REL_TOL * max(abs(hi), abs(v)), Violation(i, t, xt, v, hi))
    return rep


def lyapunov_derivative(V, f, t: float, x, h_rel: float = FD_STEP) -> float:
    """dV/dt along f by central differences: dV/dt + grad_x V . f(t, x)."""
    x = [float(c) for c in x]
    ht = h_rel * max(1.0, abs(t))
    dv = (V(t + ht, x) - V(t - ht, x)) / (2.0 * ht)
    fx = f(t, x)
    for k in range(len(x)):
        hk = h_rel * max(1.0, abs(x[k]))
        xp = list(x)
        xm = list(x)
        xp[k] += hk
        xm[k] -= hk
        dv += (V(t, xp) - V(t, xm)) / (2.0 * hk) * fx[k]
    return dv


def check_derivative_condition(spec: LyapunovSpec, dyn: ModeDynamics, mode: int, samples) -> ConditionReport:
    """dV_i/dt <= lam_i(t) V_i along mode ``mode``'s field, tolerance 1e-6 (1 + |V_i|)."""
    samples = as_samples(samples)
    V = compile_scalar(spec.V[mode], spec.dim)
    lam = _as_function(spec.lam[mode])
    f = dyn.function()
    rep = ConditionReport(f"{DERIVATIVE}[mode {mode + 1}]", 0, region=samples.region)
    for t, x in samples:
        v = V(t, x)
        lhs = lyapunov_derivative(V, f, t, x)
        rhs = lam(t) * v
        rep.samples += 1
        rep.record(lhs - rhs - 1e-6 * (1.0 + abs(v)),
                   Violation(mode, t, tuple(float(c) for c in x), lhs, rhs))
    return rep


def check_jump_condition(spec: LyapunovSpec, samples) -> ConditionReport:
    """V_i <= mu_i V_j for every ordered pair i != j."""
    samples = as_samples(samples)
    Vs = spec.V_functions()
    rep = ConditionReport(JUMP, 0, region=samples.region)
    M = spec.n_modes
    for t, x in samples:
        vals = [V(t, x) for V in Vs]
        xt = None
        for i in range(M):
            for j in range(M):
                if i == j:
                    continue
                lhs, rhs = vals[i], spec.mu[i] * vals[j]
                rep.samples += 1
                margin = lhs - rhs - REL_TOL * max(abs(lhs), abs(rhs))
                if margin > 0 and xt is None:
                    xt = tuple(float(c) for c in x)
                rep.record(margin, Violation(i, t, xt or (), lhs, rhs, other_mode=j))
    return rep


def log_bound_series(traj: Trajectory, spec: LyapunovSpec, tol: float = QUAD_TOL) -> np.ndarray:
    """ln of V_{r0}(t0, phi) * prod_i mu_i^{N_i(t, t0)} * exp(int_{t0}^t lam_{r(h)}) on the grid."""
    times = traj.times.tolist()
    modes = traj.modes.tolist()
    lams = [_as_function(l) for l in spec.lam]
    ln_mu = [math.log(m) for m in spec.mu]
    V0 = compile_scalar(spec.V[modes[0]], spec.dim)(times[0], traj.states[0].tolist())
    out = np.empty(len(times))
    acc = math.log(V0) if V0 > 0 else -math.inf
    out[0] = acc
    span = times[-1] - times[0]
    path = traj.path
    switch_set = set(path.times.tolist())
    for j in range(1, len(times)):
        a, b = times[j - 1], times[j]
        piece_tol = tol * (b - a) / span if span > 0 else tol
        acc += _quad_fn(lams[modes[j - 1]], a, b, max(piece_tol, 1e-300))
        if b in switch_set:
            acc += ln_mu[modes[j]]
        out[j] = acc
    return out


def pathwise_bound_check(traj: Trajectory, spec: LyapunovSpec, tol: float = PATHWISE_TOL) -> ConditionReport:
    """V_{r(t)}(t, x(t)) <= V_{r0}(t0, phi) prod_i mu_i^{N_i} exp(int lam) (1 + tol) on the whole grid.

    Compared in logarithms so the bound survives when both sides are tiny.
    """
    ln_bound = log_bound_series(traj, spec)
    Vs = spec.V_functions()
    rep = ConditionReport(PATHWISE, 0, region=f"trajectory on [{traj.times[0]:g}, {traj.times[-1]:g}]")
    slack = math.log1p(tol)
    for t, x, r, lb in zip(traj.times.tolist(), traj.states.tolist(), traj.modes.tolist(), ln_bound):
        v = Vs[r](t, x)
        rep.samples += 1
        if v <= 0.0:
            rep.record(-math.inf, None)
            continue
        margin = math.log(v) - lb - slack
        rep.record(margin, Violation(r, t, tuple(x), v, math.exp(lb) if lb < 700 else math.inf))
    return rep


def counts_consistent(traj: Trajectory, ln_bound: np.ndarray, spec: LyapunovSpec) -> bool:
    """Cross-check of the jump bookkeeping in :func:`log_bound_series` against path counts."""
    path = traj.path
    c = path_counts(path, path.t0, float(traj.times[-1]))
    lam_int = sum(_quad_fn(_as_function(spec.lam[m]), a, b, QUAD_TOL)
                  for a, b, m in zip(traj.times[:-1].tolist(), traj.times[1:].tolist(), traj.modes[:-1].tolist()))
    V0 = compile_scalar(spec.V[int(traj.modes[0])], spec.dim)(float(traj.times[0]), traj.states[0].tolist())
    expected = math.log(V0) + float(np.dot(c.N_i, np.log(spec.mu))) + lam_int
    return abs(expected - ln_bound[-1]) <= 1e-6 * (1 + abs(expected))
