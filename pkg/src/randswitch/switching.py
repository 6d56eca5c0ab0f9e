"""Switching laws (semi-Markov, Markov, renewal), their ergodic statistics and path sampling.

Modes are 0-based internally; files and reports show them 1-based.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.sparse.csgraph import connected_components

ROW_TOL = 1e-12
RESIDUAL_TOL = 1e-12


class SwitchingError(ValueError):
    pass


# ----------------------------------------------------------------- dwell models

@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise SwitchingError(f"exponential rate must be > 0, got {self.rate}")

    def mean(self) -> float:
        return 1.0 / self.rate

    def sample(self, rng: np.random.Generator, size=None):
        return rng.exponential(1.0 / self.rate, size)


@dataclass(frozen=True)
class Deterministic:
    d: float

    def __post_init__(self):
        if not self.d > 0:
            raise SwitchingError(f"deterministic dwell must be > 0, got {self.d}")

    def mean(self) -> float:
        return self.d

    def sample(self, rng: np.random.Generator, size=None):
        return self.d if size is None else np.full(size, self.d)


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float

    def __post_init__(self):
        if not 0 < self.a < self.b:
            raise SwitchingError(f"uniform dwell needs 0 < a < b, got a={self.a}, b={self.b}")

    def mean(self) -> float:
        return 0.5 * (self.a + self.b)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.uniform(self.a, self.b, size)


@dataclass(frozen=True)
class Gamma:
    shape: float
    scale: float

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise SwitchingError(f"gamma dwell needs shape, scale > 0, got {self.shape}, {self.scale}")

    def mean(self) -> float:
        return self.shape * self.scale

    def sample(self, rng: np.random.Generator, size=None):
        return rng.gamma(self.shape, self.scale, size)


DwellModel = Union[Exponential, Deterministic, Uniform, Gamma]


# ------------------------------------------------------------ stationary solves

def _check_square(A: np.ndarray, what: str) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] == 0:
        raise SwitchingError(f"{what} must be a non-empty square matrix, got shape {A.shape}")
    return A


def is_irreducible(A: np.ndarray) -> bool:
    """Strong connectivity of the graph with an edge i->j wherever A[i, j] > 0 (i != j)."""
    pattern = (np.asarray(A) > 0).astype(int)
    np.fill_diagonal(pattern, 0)
    if pattern.shape[0] == 1:
        return True
    n_comp, _ = connected_components(pattern, directed=True, connection="strong")
    return n_comp == 1


def _solve_left_null(A: np.ndarray) -> np.ndarray:
    """Solve x A = 0, sum(x) = 1 with the last balance equation replaced by normalization."""
    n = A.shape[0]
    M = A.T.copy()
    M[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    return np.linalg.solve(M, rhs)


def validate_stochastic(P: np.ndarray, zero_diagonal: bool = False) -> np.ndarray:
    P = _check_square(P, "transition matrix")
    if np.any(P < 0):
        raise SwitchingError("transition matrix has negative entries")
    for i, s in enumerate(P.sum(axis=1)):
        if abs(s - 1.0) > ROW_TOL:
            raise SwitchingError(f"row {i + 1} of transition matrix sums to {s!r}, not 1")
    if zero_diagonal and np.any(np.diag(P) != 0):
        i = int(np.flatnonzero(np.diag(P))[0])
        raise SwitchingError(f"semi-Markov transition matrix needs p_ii = 0 (row {i + 1})")
    return P


def validate_generator(Q: np.ndarray) -> np.ndarray:
    Q = _check_square(Q, "generator")
    off = Q - np.diag(np.diag(Q))
    if np.any(off < 0):
        raise SwitchingError("generator has negative off-diagonal rates")
    for i, s in enumerate(Q.sum(axis=1)):
        if abs(s) > ROW_TOL:
            raise SwitchingError(f"row {i + 1} of generator sums to {s!r}, not 0")
    if np.any(np.diag(Q) >= 0) and Q.shape[0] > 1:
        i = int(np.flatnonzero(np.diag(Q) >= 0)[0])
        raise SwitchingError(f"mode {i + 1} has exit rate q_i = 0")
    return Q


def embedded_stationary(P) -> np.ndarray:
    """Stationary distribution of the embedded discrete chain: pi P = pi, sum(pi) = 1."""
    P = validate_stochastic(P)
    if not is_irreducible(P):
        raise SwitchingError("embedded chain is reducible")
    pi = _solve_left_null(P - np.eye(P.shape[0]))
    residual = np.max(np.abs(pi @ P - pi))
    if residual >= RESIDUAL_TOL:
        raise SwitchingError(f"stationary solve residual {residual:.3g} too large")
    return pi


def semi_markov_stationary(pi_bar, m) -> np.ndarray:
    """Time-occupancy distribution pi_i = pi_bar_i m_i / sum_j pi_bar_j m_j."""
    pi_bar = np.asarray(pi_bar, dtype=float)
    m = np.asarray(m, dtype=float)
    if pi_bar.shape != m.shape:
        raise SwitchingError("pi_bar and m must have the same length")
    if np.any(m <= 0):
        raise SwitchingError("mean dwell times must be positive")
    w = pi_bar * m
    return w / w.sum()


def ctmc_stationary(Q) -> np.ndarray:
    """Stationary distribution of a continuous-time chain: pi Q = 0, sum(pi) = 1."""
    Q = validate_generator(Q)
    if not is_irreducible(Q):
        raise SwitchingError("generator is reducible")
    pi = _solve_left_null(Q)
    residual = np.max(np.abs(pi @ Q))
    if residual >= RESIDUAL_TOL * max(1.0, np.max(np.abs(Q))):
        raise SwitchingError(f"stationary solve residual {residual:.3g} too large")
    return pi


# ----------------------------------------------------------------------- laws

def _cumulative(row: np.ndarray) -> np.ndarray:
    return np.cumsum(row)


def _draw_index(cum: np.ndarray, row: np.ndarray, u: float) -> int:
    j = int(np.searchsorted(cum, u, side="right"))
    if j >= len(row):
        j = int(np.flatnonzero(row > 0)[-1])
    return j


@dataclass(frozen=True)
class SemiMarkov:
    P: np.ndarray
    dwell: tuple[DwellModel, ...]
    initial_mode: int = 0

    def __post_init__(self):
        object.__setattr__(self, "P", validate_stochastic(self.P, zero_diagonal=True))
        object.__setattr__(self, "dwell", tuple(self.dwell))
        if len(self.dwell) != self.n_modes:
            raise SwitchingError(f"{self.n_modes} modes but {len(self.dwell)} dwell models")
        _check_initial(self)

    @property
    def n_modes(self) -> int:
        return self.P.shape[0]

    def mean_dwell(self) -> np.ndarray:
        return np.array([d.mean() for d in self.dwell])

    def stationary(self) -> np.ndarray:
        return semi_markov_stationary(embedded_stationary(self.P), self.mean_dwell())

    def dwell_model(self, i: int) -> DwellModel:
        return self.dwell[i]


@dataclass(frozen=True)
class Markov:
    Q: np.ndarray
    initial_mode: int = 0

    def __post_init__(self):
        object.__setattr__(self, "Q", validate_generator(self.Q))
        _check_initial(self)

    @property
    def n_modes(self) -> int:
        return self.Q.shape[0]

    @property
    def exit_rates(self) -> np.ndarray:
        return -np.diag(self.Q)

    def jump_matrix(self) -> np.ndarray:
        q = self.exit_rates
        J = self.Q / q[:, None]
        np.fill_diagonal(J, 0.0)
        return J

    def mean_dwell(self) -> np.ndarray:
        return 1.0 / self.exit_rates

    def stationary(self) -> np.ndarray:
        return ctmc_stationary(self.Q)

    def dwell_model(self, i: int) -> DwellModel:
        return Exponential(float(self.exit_rates[i]))


@dataclass(frozen=True)
class Renewal:
    p: np.ndarray
    dwell: DwellModel
    initial_mode: int = 0

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1 or len(p) == 0 or np.any(p < 0):
            raise SwitchingError("renewal mode distribution must be a non-negative vector")
        if abs(p.sum() - 1.0) > ROW_TOL:
            raise SwitchingError(f"renewal mode distribution sums to {p.sum()!r}, not 1")
        object.__setattr__(self, "p", p)
        _check_initial(self)

    @property
    def n_modes(self) -> int:
        return len(self.p)

    @property
    def theta(self) -> float:
        return self.dwell.mean()

    def mean_dwell(self) -> np.ndarray:
        return np.full(self.n_modes, self.theta)

    def stationary(self) -> np.ndarray:
        # dwell does not depend on the mode, so time fractions follow p
        return self.p.copy()

    def dwell_model(self, i: int) -> DwellModel:
        return self.dwell


SwitchingLaw = Union[SemiMarkov, Markov, Renewal]


def _check_initial(law) -> None:
    if not 0 <= law.initial_mode < law.n_modes:
        raise SwitchingError(f"initial mode {law.initial_mode + 1} outside 1..{law.n_modes}")


# ---------------------------------------------------------------------- paths

@dataclass(frozen=True)
class SwitchingPath:
    """Mode ``modes[k]`` is active on ``[times[k-1], times[k])`` with ``times[-1] := t0``."""

    t0: float
    horizon: float
    times: np.ndarray
    modes: np.ndarray
    n_modes: int

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        modes = np.asarray(self.modes, dtype=int)
        if len(modes) != len(times) + 1:
            raise SwitchingError("need exactly one more mode than switching times")
        if len(times) and (np.any(np.diff(times) <= 0) or times[0] <= self.t0 or times[-1] > self.end):
            raise SwitchingError("switching times must be strictly increasing inside (t0, t0+horizon]")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "modes", modes)

    @property
    def end(self) -> float:
        return self.t0 + self.horizon

    def mode_at(self, t):
        return self.modes[np.searchsorted(self.times, t, side="right")]

    def to_csv_rows(self):
        yield (0, self.t0, int(self.modes[0]) + 1)
        for k, (tk, r) in enumerate(zip(self.times, self.modes[1:]), start=1):
            yield (k, float(tk), int(r) + 1)


def sample_path(law: SwitchingLaw, t0: float, horizon: float, rng: np.random.Generator) -> SwitchingPath:
    """Draw one switching path on ``[t0, t0 + horizon]``.

    Each sojourn draws the dwell first and the next mode second, always from
    ``rng``; the path is a pure function of the law and the generator state.
    """
    if not horizon > 0:
        raise SwitchingError("horizon must be positive")
    end = t0 + horizon
    current = law.initial_mode
    times: list[float] = []
    modes = [current]

    if isinstance(law, SemiMarkov):
        rows = law.P
        dwell = law.dwell_model
    elif isinstance(law, Markov):
        rows = law.jump_matrix()
        rates = law.exit_rates
        dwell = None
    elif isinstance(law, Renewal):
        rows = np.tile(law.p, (law.n_modes, 1))
        dwell = law.dwell_model
    else:
        raise TypeError(f"unknown switching law {type(law).__name__}")
    cums = [_cumulative(r) for r in rows]

    t = t0
    while True:
        if dwell is None:
            s = rng.exponential(1.0 / rates[current])
        else:
            s = float(dwell(current).sample(rng))
        t = t + s
        if t > end:
            break
        current = _draw_index(cums[current], rows[current], rng.random())
        times.append(t)
        modes.append(current)
    return SwitchingPath(t0, horizon, np.array(times), np.array(modes), law.n_modes)


# -------------------------------------------------------------------- counting

@dataclass(frozen=True)
class PathCounts:
    N: int
    N_i: np.ndarray
    T_i: np.ndarray


def _occupation_to(path: SwitchingPath, t: np.ndarray) -> np.ndarray:
    """Occupation times T_i(t, t0) for every t, shape (len(t), n_modes)."""
    starts = np.concatenate(([path.t0], path.times))
    seg_len = np.diff(np.concatenate((starts, [path.end])))
    cum = np.zeros((len(starts) + 1, path.n_modes))
    for k, (r, L) in enumerate(zip(path.modes, seg_len)):
        cum[k + 1] = cum[k]
        cum[k + 1, r] += L
    t = np.atleast_1d(np.asarray(t, dtype=float))
    k = np.searchsorted(path.times, t, side="right")
    out = cum[k].copy()
    out[np.arange(len(t)), path.modes[k]] += t - starts[k]
    return out


def _check_window(path: SwitchingPath, s: float, t: float) -> None:
    slack = 1e-12 * max(1.0, abs(path.end))
    if not (path.t0 - slack <= s <= t <= path.end + slack):
        raise SwitchingError(f"window [{s}, {t}] outside path support [{path.t0}, {path.end}]")


def path_counts(path: SwitchingPath, s: float, t: float) -> PathCounts:
    """Switch counts N, per-mode entry counts N_i on (s, t] and occupation times T_i on [s, t]."""
    _check_window(path, s, t)
    lo = np.searchsorted(path.times, s, side="right")
    hi = np.searchsorted(path.times, t, side="right")
    entered = path.modes[lo + 1:hi + 1]
    N_i = np.bincount(entered, minlength=path.n_modes)
    occ = _occupation_to(path, [s, t])
    T_i = np.maximum(occ[1] - occ[0], 0.0)
    return PathCounts(int(hi - lo), N_i, T_i)


def occupancy_series(path: SwitchingPath, grid) -> np.ndarray:
    """Fractions T_i(t, t0) / (t - t0) on ``grid``; at t = t0 the initial mode gets 1."""
    grid = np.asarray(grid, dtype=float)
    if len(grid) and (grid.min() < path.t0 or grid.max() > path.end * (1 + 1e-12) + 1e-12):
        raise SwitchingError("grid outside path support")
    occ = _occupation_to(path, grid)
    elapsed = grid - path.t0
    out = np.zeros_like(occ)
    pos = elapsed > 0
    out[pos] = occ[pos] / elapsed[pos, None]
    out[~pos, path.modes[0]] = 1.0
    return out
