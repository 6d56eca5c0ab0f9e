"""Integration of the switched system x' = f_{r(t)}(t, x) along a realized switching path."""
from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exprlang import Expr, compile_vector, free_vars, parse_expr
from .switching import SwitchingPath

log = logging.getLogger(__name__)

DEFAULT_STEP = 1e-3
# Components below the smallest normal double are flushed to zero: RK4 in the
# subnormal range stalls at ~5e-324 instead of decaying.
FLUSH_BELOW = sys.float_info.min


class NonFiniteStateError(ArithmeticError):
    def __init__(self, t: float):
        self.t = t
        super().__init__(f"state became non-finite at t = {t!r}")


@dataclass(frozen=True)
class ModeDynamics:
    """Vector field of one mode: ``field[k]`` is the k-th component of f_i(t, x)."""

    field: tuple[Expr, ...]

    def __post_init__(self):
        n = len(self.field)
        allowed = {"t"} | {f"x{k}" for k in range(1, n + 1)}
        for e in self.field:
            extra = free_vars(e) - allowed
            if extra:
                raise ValueError(f"field component uses {sorted(extra)} outside dimension {n}")

    @classmethod
    def from_strings(cls, components: Sequence[str]) -> "ModeDynamics":
        n = len(components)
        return cls(tuple(parse_expr(c, n) for c in components))

    @property
    def dim(self) -> int:
        return len(self.field)

    def function(self):
        return compile_vector(self.field, self.dim)

    def check_equilibrium(self, ts: Sequence[float] = (0.0, 0.5, 1.0, 2.0, 5.0, 10.0)) -> bool:
        """Warn (do not fail) if f(t, 0) != 0 at any of ``ts``."""
        f = self.function()
        zero = (0.0,) * self.dim
        for t in ts:
            if any(v != 0.0 for v in f(t, zero)):
                log.warning("f(t, 0) != 0 at t = %g; the origin is not an equilibrium", t)
                return False
        return True


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # shape (len(times), n)
    modes: np.ndarray  # active mode at each grid point (new mode at a switching time)
    path: SwitchingPath

    def sample(self, grid) -> np.ndarray:
        """States on ``grid`` by linear interpolation (exact at grid points of the trajectory)."""
        grid = np.asarray(grid, dtype=float)
        return np.column_stack([np.interp(grid, self.times, self.states[:, k])
                                for k in range(self.states.shape[1])])


def time_grid(path: SwitchingPath, step: float, t_end: float) -> np.ndarray:
    """Nominal points ``t0 + j*step`` merged with every switching time in ``(t0, t_end)``.

    A nominal point within ``1e-9 * step`` of a switching time is replaced by it,
    so each switching time appears exactly once.
    """
    t0 = path.t0
    n_nom = int(math.floor((t_end - t0) / step * (1 + 1e-12)))
    nominal = t0 + step * np.arange(n_nom + 1)
    if t_end - nominal[-1] > 1e-9 * step:
        nominal = np.append(nominal, t_end)
    else:
        nominal[-1] = t_end
    switches = path.times[(path.times > t0) & (path.times < t_end)]
    if len(switches) == 0:
        return nominal
    idx = np.clip(np.searchsorted(nominal, switches), 1, len(nominal) - 1)
    close_hi = np.abs(nominal[idx] - switches) <= 1e-9 * step
    close_lo = np.abs(nominal[idx - 1] - switches) <= 1e-9 * step
    keep = np.ones(len(nominal), bool)
    keep[idx[close_hi]] = False
    keep[(idx - 1)[close_lo & ~close_hi]] = False
    keep[0] = True
    keep[-1] = True
    return np.union1d(nominal[keep], switches)


def integrate(dyn: Sequence[ModeDynamics], path: SwitchingPath, phi, step: float = DEFAULT_STEP,
              t_end: float | None = None) -> Trajectory:
    """Classical RK4 on a grid that lands exactly on every switching time.

    The state is continuous across switches. Raises :class:`NonFiniteStateError`
    at the first grid time where the state overflows or turns NaN.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if t_end is None:
        t_end = path.end
    if t_end > path.end * (1 + 1e-12) + 1e-12:
        raise ValueError(f"t_end {t_end} beyond path horizon {path.end}")
    n = len(phi)
    for d in dyn:
        if d.dim != n:
            raise ValueError(f"mode field has dimension {d.dim}, initial state has {n}")
    if len(dyn) < path.n_modes:
        raise ValueError(f"{len(dyn)} mode fields for a {path.n_modes}-mode path")

    funcs = [d.function() for d in dyn]
    grid = time_grid(path, step, t_end)
    modes = path.mode_at(grid)
    states = np.empty((len(grid), n))
    x = [float(v) for v in phi]
    states[0] = x
    rng_n = range(n)
    tl = grid.tolist()
    ml = modes.tolist()
    for j in range(len(tl) - 1):
        t = tl[j]
        h = tl[j + 1] - t
        # a step never straddles a switch, so the mode at its start rules it
        f = funcs[ml[j]]
        hh = 0.5 * h
        k1 = f(t, x)
        k2 = f(t + hh, [x[i] + hh * k1[i] for i in rng_n])
        k3 = f(t + hh, [x[i] + hh * k2[i] for i in rng_n])
        k4 = f(t + h, [x[i] + h * k3[i] for i in rng_n])
        x = [x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in rng_n]
        if not all(map(math.isfinite, x)):
            raise NonFiniteStateError(tl[j + 1])
        x = [v if abs(v) >= FLUSH_BELOW else 0.0 for v in x]
        states[j + 1] = x
    return Trajectory(grid, states, modes, path)


def euclidean_norms(states: np.ndarray) -> np.ndarray:
    # scaled so tiny states (|x| ~ 1e-200) do not underflow when squared
    states = np.atleast_2d(states)
    scale = np.max(np.abs(states), axis=1)
    safe = np.where(scale > 0, scale, 1.0)
    return scale * np.sqrt(np.sum((states / safe[:, None]) ** 2, axis=1))


def trajectory_norms(traj: Trajectory) -> np.ndarray:
    return euclidean_norms(traj.states)
