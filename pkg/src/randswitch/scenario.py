"""Scenario documents: YAML describing modes, Lyapunov data, switching law and run settings.

Schema (keys marked * are required)::

    name: str
    dimension*: int
    modes*:                      # one entry per mode, in mode order
      - name: str
        field*: [str, ...]       # one expression per state component
        V*: str                  # Lyapunov function V_i(t, x)
        lambda*: str             # rate lambda_i(t)
        mu*: float               # jump factor, >= 1
    envelopes*: {c1, p1, c2, p2}  # c1 |x|^p1 <= V_i <= c2 |x|^p2
    switching*:                  # exactly one law
      law*: semi_markov | markov | renewal
      initial_mode: int          # 1-based, default 1
      P: [[...], ...]            # semi_markov: embedded chain, zero diagonal
      Q: [[...], ...]            # markov: generator
      p: [...]                   # renewal: mode distribution
      dwell: [record, ...] | record   # semi_markov: one per mode; renewal: one
    sim: {t0, horizon, step, x0, output_stride}
    analysis:
      t_grid: {t_max, points}    # start times for stable-function estimates
      mc_samples: int
      sample_radius: float       # state-space ball for condition checks
      sample_times: {t_min, t_max, points}
      sample_states: int
      T: float                   # sup-norm window start, relative to t0
      occupancy_horizon: float
    analytic_bounds: {kind: PHI | M | LAMBDA_BAR, values: [...]}
    seed: int

Dwell records are ``{dist: exponential, rate}``, ``{dist: deterministic, d}``,
``{dist: uniform, a, b}`` or ``{dist: gamma, shape, scale}``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .criteria import KINDS, ModeBounds
from .dynamics import DEFAULT_STEP, ModeDynamics
from .exprlang import ExprSyntaxError, free_vars, parse_expr
from .lyapunov import LyapunovSpec
from .switching import (Deterministic, Exponential, Gamma, Markov, Renewal, SemiMarkov, SwitchingError,
                        Uniform)

SHIPPED = ("example1_semimarkov", "example1_markov", "example1_renewal", "example1_literal")


class ScenarioError(ValueError):
    """Validation failure; ``path`` names the offending field, e.g. ``switching.P[1]``."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class ModeSpec:
    name: str
    field: tuple[str, ...]
    V: str
    lam: str
    mu: float


@dataclass(frozen=True)
class SimConfig:
    t0: float = 0.0
    horizon: float = 20.0
    step: float = DEFAULT_STEP
    x0: tuple[float, ...] = ()
    output_stride: int = 10


@dataclass(frozen=True)
class AnalysisConfig:
    t_max: float = 200.0
    t_points: int = 64
    mc_samples: int = 4096
    sample_radius: float = 10.0
    sample_t: tuple[float, float, int] = (0.0, 20.0, 33)
    sample_states: int = 512
    T: float = 10.0
    occupancy_horizon: float = 1e4


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    dim: int
    modes: tuple[ModeSpec, ...]
    envelopes: tuple[float, float, float, float]
    law: Any  # SemiMarkov | Markov | Renewal
    sim: SimConfig
    analysis: AnalysisConfig
    seed: int = 0
    analytic_bounds: Optional[ModeBounds] = None
    sha256: str = ""
    source: str = ""
    _dyn: tuple = field(default=(), repr=False, compare=False)

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def law_name(self) -> str:
        return {SemiMarkov: "semi_markov", Markov: "markov", Renewal: "renewal"}[type(self.law)]

    @property
    def mu(self) -> tuple[float, ...]:
        return tuple(m.mu for m in self.modes)

    @property
    def dynamics(self) -> list[ModeDynamics]:
        return list(self._dyn)

    @property
    def lyapunov(self) -> LyapunovSpec:
        c1, p1, c2, p2 = self.envelopes
        return LyapunovSpec.from_strings(self.dim, [m.V for m in self.modes], [m.lam for m in self.modes],
                                         list(self.mu), c1, p1, c2, p2)

    def lam_expr(self, i: int):
        return parse_expr(self.modes[i].lam, self.dim)


# ------------------------------------------------------------------ parsing

def _get(d: dict, key: str, path: str, default=...):
    if not isinstance(d, dict):
        raise ScenarioError(path, "expected a mapping")
    if key not in d:
        if default is ...:
            raise ScenarioError(f"{path}.{key}" if path else key, "missing required field")
        return default
    return d[key]


def _num(v, path: str, positive: bool = False, integer: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(path, f"expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ScenarioError(path, f"expected an integer, got {v!r}")
    if not np.isfinite(v):
        raise ScenarioError(path, "must be finite")
    if positive and not v > 0:
        raise ScenarioError(path, f"must be positive, got {v!r}")
    return int(v) if integer else float(v)


def _expr(text, dim: int, path: str, only_t: bool = False) -> str:
    if not isinstance(text, (str, int, float)) or isinstance(text, bool):
        raise ScenarioError(path, f"expected an expression string, got {text!r}")
    text = str(text)
    try:
        e = parse_expr(text, dim)
    except ExprSyntaxError as exc:
        raise ScenarioError(path, str(exc)) from None
    if only_t and free_vars(e) - {"t"}:
        raise ScenarioError(path, f"may only depend on t, uses {sorted(free_vars(e) - {'t'})}")
    return text


def _matrix(v, n: int, path: str) -> np.ndarray:
    if not isinstance(v, list) or len(v) != n:
        raise ScenarioError(path, f"expected {n} rows (one per mode)")
    rows = []
    for i, row in enumerate(v):
        if not isinstance(row, list) or len(row) != n:
            raise ScenarioError(f"{path}[{i}]", f"expected {n} entries")
        rows.append([_num(x, f"{path}[{i}][{j}]") for j, x in enumerate(row)])
    return np.array(rows)


def _dwell(rec, path: str):
    dist = _get(rec, "dist", path)
    try:
        if dist == "exponential":
            return Exponential(_num(_get(rec, "rate", path), f"{path}.rate"))
        if dist == "deterministic":
            return Deterministic(_num(_get(rec, "d", path), f"{path}.d"))
        if dist == "uniform":
            return Uniform(_num(_get(rec, "a", path), f"{path}.a"), _num(_get(rec, "b", path), f"{path}.b"))
        if dist == "gamma":
            return Gamma(_num(_get(rec, "shape", path), f"{path}.shape"),
                         _num(_get(rec, "scale", path), f"{path}.scale"))
    except SwitchingError as exc:
        raise ScenarioError(path, str(exc)) from None
    raise ScenarioError(f"{path}.dist", f"unknown dwell distribution {dist!r}")


def _law(d: dict, n: int):
    law = _get(d, "law", "switching")
    init = _num(d.get("initial_mode", 1), "switching.initial_mode", integer=True)
    if not 1 <= init <= n:
        raise ScenarioError("switching.initial_mode", f"must be in 1..{n}, got {init}")
    keys = {"P", "Q", "p"} & set(d)
    expected = {"semi_markov": {"P"}, "markov": {"Q"}, "renewal": {"p"}}.get(law)
    if expected is None:
        raise ScenarioError("switching.law", f"unknown law {law!r}; use semi_markov, markov or renewal")
    if keys != expected:
        raise ScenarioError("switching", f"law {law} takes exactly {sorted(expected)}, found {sorted(keys)}")
    try:
        if law == "semi_markov":
            P = _matrix(d["P"], n, "switching.P")
            _check_rows(P, 1.0, "switching.P")
            dw = _get(d, "dwell", "switching")
            if isinstance(dw, dict):
                dw = [dw] * n
            if not isinstance(dw, list) or len(dw) != n:
                raise ScenarioError("switching.dwell", f"expected {n} dwell records")
            return SemiMarkov(P, tuple(_dwell(r, f"switching.dwell[{i}]") for i, r in enumerate(dw)), init - 1)
        if law == "markov":
            Q = _matrix(d["Q"], n, "switching.Q")
            _check_rows(Q, 0.0, "switching.Q")
            if "dwell" in d:
                raise ScenarioError("switching.dwell", "Markov dwell times come from Q")
            return Markov(Q, init - 1)
        p = d["p"]
        if not isinstance(p, list) or len(p) != n:
            raise ScenarioError("switching.p", f"expected {n} probabilities")
        p = np.array([_num(x, f"switching.p[{i}]") for i, x in enumerate(p)])
        dw = _get(d, "dwell", "switching")
        if not isinstance(dw, dict):
            raise ScenarioError("switching.dwell", "renewal law takes a single dwell record")
        return Renewal(p, _dwell(dw, "switching.dwell"), init - 1)
    except SwitchingError as exc:
        raise ScenarioError("switching", str(exc)) from None


def _check_rows(A: np.ndarray, target: float, path: str) -> None:
    # name the row here; the switching validators only know the matrix
    for i, s in enumerate(A.sum(axis=1)):
        if abs(s - target) > 1e-12:
            raise ScenarioError(f"{path}[{i}]", f"row sums to {s:.12g}, expected {target:g}")


def parse_scenario(doc: dict, sha256: str = "", source: str = "") -> ScenarioSpec:
    if not isinstance(doc, dict):
        raise ScenarioError("", "scenario must be a mapping at top level")
    dim = _num(_get(doc, "dimension", ""), "dimension", positive=True, integer=True)
    raw_modes = _get(doc, "modes", "")
    if not isinstance(raw_modes, list) or not raw_modes:
        raise ScenarioError("modes", "expected a non-empty list")
    modes, dyn = [], []
    for i, m in enumerate(raw_modes):
        p = f"modes[{i}]"
        fld = _get(m, "field", p)
        if not isinstance(fld, list) or len(fld) != dim:
            raise ScenarioError(f"{p}.field", f"expected {dim} expressions")
        fld = tuple(_expr(c, dim, f"{p}.field[{k}]") for k, c in enumerate(fld))
        V = _expr(_get(m, "V", p), dim, f"{p}.V")
        lam = _expr(_get(m, "lambda", p), dim, f"{p}.lambda", only_t=True)
        mu = _num(_get(m, "mu", p), f"{p}.mu")
        if not mu >= 1.0:
            raise ScenarioError(f"{p}.mu", f"must be >= 1, got {mu!r}")
        modes.append(ModeSpec(str(m.get("name", i + 1)), fld, V, lam, mu))
        dyn.append(ModeDynamics.from_strings(fld))
    n = len(modes)

    env = _get(doc, "envelopes", "")
    envelopes = tuple(_num(_get(env, k, "envelopes"), f"envelopes.{k}", positive=True)
                      for k in ("c1", "p1", "c2", "p2"))
    law = _law(_get(doc, "switching", ""), n)

    s = doc.get("sim", {}) or {}
    x0 = _get(s, "x0", "sim")
    if not isinstance(x0, list) or len(x0) != dim:
        raise ScenarioError("sim.x0", f"expected {dim} numbers")
    sim = SimConfig(
        t0=_num(s.get("t0", 0.0), "sim.t0"),
        horizon=_num(s.get("horizon", 20.0), "sim.horizon", positive=True),
        step=_num(s.get("step", DEFAULT_STEP), "sim.step", positive=True),
        x0=tuple(_num(v, f"sim.x0[{k}]") for k, v in enumerate(x0)),
        output_stride=_num(s.get("output_stride", 10), "sim.output_stride", positive=True, integer=True),
    )

    a = doc.get("analysis", {}) or {}
    tg = a.get("t_grid", {}) or {}
    st = a.get("sample_times", {}) or {}
    analysis = AnalysisConfig(
        t_max=_num(tg.get("t_max", 200.0), "analysis.t_grid.t_max", positive=True),
        t_points=_num(tg.get("points", 64), "analysis.t_grid.points", positive=True, integer=True),
        mc_samples=_num(a.get("mc_samples", 4096), "analysis.mc_samples", positive=True, integer=True),
        sample_radius=_num(a.get("sample_radius", 10.0), "analysis.sample_radius", positive=True),
        sample_t=(_num(st.get("t_min", 0.0), "analysis.sample_times.t_min"),
                  _num(st.get("t_max", 20.0), "analysis.sample_times.t_max"),
                  _num(st.get("points", 33), "analysis.sample_times.points", positive=True, integer=True)),
        sample_states=_num(a.get("sample_states", 512), "analysis.sample_states", positive=True, integer=True),
        T=_num(a.get("T", 10.0), "analysis.T"),
        occupancy_horizon=_num(a.get("occupancy_horizon", 1e4), "analysis.occupancy_horizon", positive=True),
    )

    bounds = None
    if doc.get("analytic_bounds") is not None:
        ab = doc["analytic_bounds"]
        kind = _get(ab, "kind", "analytic_bounds")
        if kind not in KINDS:
            raise ScenarioError("analytic_bounds.kind", f"must be one of {list(KINDS)}")
        vals = _get(ab, "values", "analytic_bounds")
        if not isinstance(vals, list) or len(vals) != n:
            raise ScenarioError("analytic_bounds.values", f"expected {n} numbers")
        vals = [_num(v, f"analytic_bounds.values[{i}]") for i, v in enumerate(vals)]
        bounds = ModeBounds.uniform(kind, vals, [m.mu for m in modes])

    seed = _num(doc.get("seed", 0), "seed", integer=True)
    if seed < 0:
        raise ScenarioError("seed", "must be non-negative")
    return ScenarioSpec(str(doc.get("name", "scenario")), dim, tuple(modes), envelopes, law, sim, analysis,
                        seed, bounds, sha256, source, tuple(dyn))


def shipped_path(name: str) -> Path:
    ref = resources.files("randswitch") / "data" / f"{name}.yaml"
    return Path(str(ref))


def resolve(name_or_path: str) -> Path:
    """A file path, or the bare name of a shipped scenario."""
    p = Path(name_or_path)
    if p.is_file():
        return p
    if name_or_path in SHIPPED or shipped_path(name_or_path).is_file():
        return shipped_path(name_or_path)
    raise ScenarioError("", f"no scenario file or shipped scenario named {name_or_path!r}")


def load_scenario(path) -> ScenarioSpec:
    """Load and validate a scenario file (or shipped scenario name); errors name the field path."""
    p = resolve(str(path))
    raw = p.read_bytes()
    try:
        doc = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ScenarioError("", f"not valid YAML: {exc}") from None
    return parse_scenario(doc, hashlib.sha256(raw).hexdigest(), str(p))
