"""Replicated simulation and the empirical statistics behind almost-sure stability."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import rng as rngmod
from .dynamics import NonFiniteStateError, Trajectory, euclidean_norms, integrate, trajectory_norms
from .switching import occupancy_series, sample_path

log = logging.getLogger(__name__)


class ZeroStateError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LyapunovEstimate:
    slope: float  # least-squares slope of ln|x| over the final half
    endpoint: float  # ln|x(t_end)| / (t_end - t0)
    collapsed_at: Optional[float] = None  # first time |x| hit exact zero, if any


def lyapunov_exponent(traj: Trajectory, truncate_at_collapse: bool = False) -> LyapunovEstimate:
    """Growth rate of ``|x(t)|`` from a regression of ``ln|x|`` on ``t`` over the final half.

    With ``truncate_at_collapse`` a trajectory that decays to exact zero (below
    the double range) is cut at its last nonzero point and the regression uses
    the final half of what remains; otherwise a zero in the window raises
    :class:`ZeroStateError`.
    """
    norms = trajectory_norms(traj)
    times = traj.times
    t0 = times[0]
    collapsed_at = None
    zeros = np.flatnonzero(norms == 0.0)
    if len(zeros):
        if zeros[0] == 0:
            raise ZeroStateError("initial state is zero; exponent undefined")
        if truncate_at_collapse:
            collapsed_at = float(times[zeros[0]])
            times = times[:zeros[0]]
            norms = norms[:zeros[0]]
    t_end = times[-1]
    if not t_end > t0:
        raise ZeroStateError("state reaches zero immediately; exponent undefined")
    window = times >= t0 + 0.5 * (t_end - t0)
    if window.sum() < 2:
        window = np.zeros(len(times), bool)
        window[-2:] = True
    if np.any(norms[window] == 0.0):
        bad = float(times[window][np.argmax(norms[window] == 0.0)])
        raise ZeroStateError(f"zero state at t = {bad!r} inside the regression window")
    slope = float(np.polyfit(times[window] - times[window][0], np.log(norms[window]), 1)[0])
    endpoint = math.log(norms[-1]) / (t_end - t0)
    return LyapunovEstimate(slope, endpoint, collapsed_at)


@dataclass(frozen=True)
class ReplicationStats:
    rep: int
    terminal_norm: float
    sup_norm: float
    lyap_slope: float
    lyap_endpoint: float
    aborted: bool
    collapsed_at: Optional[float] = None
    aborted_at: Optional[float] = None

    def to_csv_row(self):
        return (self.rep, self.terminal_norm, self.sup_norm, self.lyap_slope, self.lyap_endpoint, int(self.aborted))


@dataclass(frozen=True)
class EnsembleStats:
    seed: int
    replications: tuple[ReplicationStats, ...]
    grid: np.ndarray
    ms: np.ndarray  # E|x(t)|^2 over completed replications
    occupancy: np.ndarray  # mean of T_i(t, t0)/(t - t0) over replications, shape (len(grid), M)
    occupancy_error: np.ndarray  # max_i |occupancy_i - pi_i|
    sup_from: float

    @property
    def n(self) -> int:
        return len(self.replications)

    @property
    def completed(self) -> list[ReplicationStats]:
        return [r for r in self.replications if not r.aborted]

    @property
    def n_aborted(self) -> int:
        return sum(r.aborted for r in self.replications)

    def mean_square_rows(self):
        return zip(self.grid.tolist(), self.ms.tolist())

    def occupancy_rows(self):
        for t, row in zip(self.grid.tolist(), self.occupancy.tolist()):
            yield (t, *row)


def common_grid(t0: float, t_end: float, step: float, stride: int) -> np.ndarray:
    dt = step * stride
    n = int(math.floor((t_end - t0) / dt * (1 + 1e-12)))
    grid = t0 + dt * np.arange(n + 1)
    if t_end - grid[-1] > 1e-9 * step:
        grid = np.append(grid, t_end)
    return grid


def mean_square(series: list[np.ndarray], length: int) -> np.ndarray:
    """Pointwise average of |x(t)|^2 series; exactly rounded, so independent of replication order."""
    if not series:
        raise ValueError("need at least one completed replication")
    stacked = np.vstack(series)
    return np.array([math.fsum(stacked[:, j]) / len(series) for j in range(length)])


def run_ensemble(scenario, n: int, seed: int, horizon: float | None = None, step: float | None = None,
                 on_trajectory: Callable[[int, Trajectory], None] | None = None) -> EnsembleStats:
    """Simulate ``n`` replications; replication ``r`` samples its path from substream ``(seed, r)``.

    Replications whose state overflows are kept as aborted records and left out
    of the aggregates.
    """
    if n < 1:
        raise ValueError("need at least one replication")
    sim = scenario.sim
    horizon = sim.horizon if horizon is None else horizon
    step = sim.step if step is None else step
    law = scenario.law
    dyn = scenario.dynamics
    t0 = sim.t0
    t_end = t0 + horizon
    grid = common_grid(t0, t_end, step, sim.output_stride)
    sup_from = t0 + scenario.analysis.T
    pi = law.stationary()
    zero_start = not np.any(np.asarray(sim.x0, dtype=float))

    reps = []
    sq_series = []
    occ_terms = []
    for r in range(n):
        path = sample_path(law, t0, horizon, rngmod.substream(seed, rngmod.PATHS, r))
        occ_terms.append(occupancy_series(path, grid))
        try:
            traj = integrate(dyn, path, sim.x0, step, t_end)
        except NonFiniteStateError as exc:
            log.warning("replication %d aborted: %s", r, exc)
            nan = math.nan
            reps.append(ReplicationStats(r, nan, nan, nan, nan, True, aborted_at=exc.t))
            continue
        if on_trajectory is not None:
            on_trajectory(r, traj)
        norms = trajectory_norms(traj)
        sup_mask = traj.times >= sup_from - 1e-12
        sup = float(np.max(norms[sup_mask])) if sup_mask.any() else float(norms[-1])
        if zero_start:
            est = LyapunovEstimate(math.nan, math.nan)
        else:
            est = lyapunov_exponent(traj, truncate_at_collapse=True)
        reps.append(ReplicationStats(r, float(norms[-1]), sup, est.slope, est.endpoint, False,
                                     collapsed_at=est.collapsed_at))
        sq_series.append(euclidean_norms(traj.sample(grid)) ** 2)

    ms = mean_square(sq_series, len(grid)) if sq_series else np.full(len(grid), np.nan)
    stacked = np.stack(occ_terms)
    occ = np.array([[math.fsum(stacked[:, j, i]) / n for i in range(law.n_modes)] for j in range(len(grid))])
    occ_err = np.max(np.abs(occ - pi[None, :]), axis=1)
    return EnsembleStats(seed, tuple(reps), grid, ms, occ, occ_err, sup_from)
