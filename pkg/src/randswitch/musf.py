"""Stable-function estimation: quadrature of rate functions over random dwell windows.

The central quantity is ``E[int_t^{t+S} lam(h) dh]`` for a random dwell ``S``,
estimated by Monte Carlo on a grid of start times. Its maximum over the grid
gives the mean bound (MUSF), and dividing by ``E[S]`` gives the exponential
rate bound (MUESF). A finite grid can only falsify uniformity in ``t``, so
verdicts read "consistent with", never "proven".
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from . import rng as rngmod
from .exprlang import Expr, compile_scalar, free_vars
from .switching import Deterministic, DwellModel

QUAD_TOL = 1e-9
MAX_DEPTH = 40
PANEL = 1.0
_EPS = np.finfo(float).eps


class QuadratureError(ArithmeticError):
    pass


def _as_function(lam: Union[Expr, Callable[[float], float]]) -> Callable[[float], float]:
    if isinstance(lam, Expr):
        extra = free_vars(lam) - {"t"}
        if extra:
            raise ValueError(f"rate function may only use t, found {sorted(extra)}")
        g = compile_scalar(lam, 0)
        return lambda t: g(t)
    return lam


def _simpson(f, a, fa, m, fm, b, fb, whole, eps, depth):
    lm = 0.5 * (a + m)
    rm = 0.5 * (m + b)
    flm = f(lm)
    frm = f(rm)
    if not (math.isfinite(flm) and math.isfinite(frm)):
        raise QuadratureError(f"non-finite integrand near t = {lm if not math.isfinite(flm) else rm!r}")
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    delta = left + right - whole
    # second test: refinement below rounding noise cannot improve the estimate
    if abs(delta) <= 15.0 * eps or abs(delta) <= 8.0 * _EPS * (abs(left) + abs(right)):
        return left + right + delta / 15.0
    if depth <= 0:
        raise QuadratureError(f"tolerance not reached at max depth {MAX_DEPTH} on [{a!r}, {b!r}]")
    return (_simpson(f, a, fa, lm, flm, m, fm, left, 0.5 * eps, depth - 1)
            + _simpson(f, m, fm, rm, frm, b, fb, right, 0.5 * eps, depth - 1))


def _quad_fn(f, a: float, b: float, tol: float) -> float:
    if b == a:
        return 0.0
    width = b - a
    n_panels = max(1, math.ceil(width / PANEL))
    edges = [a + width * k / n_panels for k in range(n_panels)] + [b]
    total = 0.0
    fa = f(a)
    for lo, hi in zip(edges[:-1], edges[1:]):
        m = 0.5 * (lo + hi)
        fm, fb = f(m), f(hi)
        if not all(math.isfinite(v) for v in (fa, fm, fb)):
            raise QuadratureError(f"non-finite integrand on [{lo!r}, {hi!r}]")
        whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb)
        total += _simpson(f, lo, fa, m, fm, hi, fb, whole, tol * (hi - lo) / width, MAX_DEPTH)
        fa = fb
    return total


def quad(lam, a: float, b: float, tol: float = QUAD_TOL) -> float:
    """Adaptive Simpson quadrature of ``lam`` over ``[a, b]`` to absolute tolerance ``tol``.

    The interval is first split into unit panels so oscillatory integrands
    cannot fool the first Simpson comparison.
    """
    if not a <= b:
        raise ValueError(f"need a <= b, got [{a}, {b}]")
    return _quad_fn(_as_function(lam), float(a), float(b), tol)


def cumulative_quad(lam, points, tol: float = QUAD_TOL) -> np.ndarray:
    """Integrals from ``points[0]`` to every point; each piece gets a share of ``tol``
    proportional to its length, so every entry is accurate to ``tol``."""
    f = _as_function(lam)
    pts = [float(p) for p in points]
    span = pts[-1] - pts[0] if len(pts) > 1 else 0.0
    out = np.zeros(len(pts))
    acc = 0.0
    for k in range(1, len(pts)):
        piece_tol = tol * (pts[k] - pts[k - 1]) / span if span > 0 else tol
        acc += _quad_fn(f, pts[k - 1], pts[k], max(piece_tol, 1e-300))
        out[k] = acc
    return out


# ------------------------------------------------------------- Monte Carlo

@dataclass(frozen=True)
class MonteCarlo:
    samples: int = 4096
    seed: int = 0
    stream: int = 0


@dataclass(frozen=True)
class MeanIntegralEstimate:
    t_grid: np.ndarray
    mean: np.ndarray
    std_error: np.ndarray
    mc_samples: int
    quad_tol: float
    dwell_mean: float

    @property
    def upper(self) -> np.ndarray:
        return self.mean + 3.0 * self.std_error

    def to_csv_rows(self):
        for t, m, s in zip(self.t_grid, self.mean, self.std_error):
            yield (float(t), float(m), float(s), self.mc_samples)


def default_t_grid(t_max: float = 200.0, points: int = 64) -> np.ndarray:
    """``t = 0`` followed by ``points - 1`` log-spaced start times from 0.01 to ``t_max``."""
    return np.concatenate(([0.0], np.geomspace(1e-2, t_max, points - 1)))


def _window_integrals(f, t: float, S: np.ndarray, tol: float) -> np.ndarray:
    """int_t^{t+S_k} f for every draw, sharing work along the sorted draws."""
    order = np.argsort(S, kind="stable")
    ends = t + S[order]
    cum = cumulative_quad(f, np.concatenate(([t], ends)), tol)[1:]
    out = np.empty_like(cum)
    out[order] = cum
    return out


def mean_integral(lam, dwell: DwellModel, t_grid, mc: MonteCarlo = MonteCarlo(),
                  tol: float = QUAD_TOL) -> MeanIntegralEstimate:
    """Monte Carlo estimate of ``E[int_t^{t+S} lam]`` at each start time in ``t_grid``.

    The same dwell draws are reused at every start time, so differences along
    the grid reflect ``lam`` rather than sampling noise. A single sample reports
    zero standard error.
    """
    if mc.samples < 1:
        raise ValueError("need at least one Monte Carlo sample")
    f = _as_function(lam)
    t_grid = np.asarray(t_grid, dtype=float)
    means = np.empty(len(t_grid))
    errs = np.zeros(len(t_grid))
    if not isinstance(dwell, Deterministic):
        gen = rngmod.substream(mc.seed, rngmod.MUSF, mc.stream)
        S = np.asarray(dwell.sample(gen, mc.samples), dtype=float)
    for g, t in enumerate(t_grid):
        if isinstance(dwell, Deterministic):
            means[g] = _quad_fn(f, float(t), float(t) + dwell.d, tol)
            continue
        vals = _window_integrals(f, float(t), S, tol)
        means[g] = math.fsum(vals) / len(vals)
        if len(vals) > 1:
            errs[g] = float(np.std(vals, ddof=1)) / math.sqrt(len(vals))
    return MeanIntegralEstimate(t_grid, means, errs, mc.samples, tol, dwell.mean())


# ---------------------------------------------------------- classification

MUESF = "MUESF"
MUSF_WRT_PHI = "MUSF_wrt_phi"
MUSF = "MUSF"
UNCLASSIFIED = "UNCLASSIFIED"


@dataclass(frozen=True)
class StableFunctionClass:
    verdict: str
    lam_bar: float  # rate bound: max of upper / E[S]
    M_hat: float  # mean bound: max of upper
    evidence: MeanIntegralEstimate
    notes: tuple[str, ...] = field(default=())

    @property
    def argmax_t(self) -> float:
        return float(self.evidence.t_grid[int(np.argmax(self.evidence.upper))])


def _grows_at_end(est: MeanIntegralEstimate, window: int = 5) -> tuple[bool, str]:
    mean, se, t = est.mean, est.std_error, est.t_grid
    tail = mean[-window:]
    noise = 3.0 * math.sqrt(float(np.sum(se[-window:] ** 2)))
    if len(tail) >= 2 and np.all(np.diff(tail) > 0) and tail[-1] - tail[0] > noise:
        return True, f"estimates strictly increase over the last {len(tail)} grid points"
    half = t[-1] / 2.0
    late, early = t >= half, t < half
    if late.any() and early.any():
        i_late = int(np.argmax(np.where(late, mean, -np.inf)))
        i_early = int(np.argmax(np.where(early, mean, -np.inf)))
        gap = mean[i_late] - mean[i_early]
        margin = 3.0 * math.hypot(se[i_late], se[i_early]) + 1e-6 * (1.0 + abs(mean[i_early]))
        if gap > margin:
            return True, (f"maximum over t >= {half:g} exceeds maximum over t < {half:g} "
                          f"by {gap:.4g}")
    return False, ""


def classify(lam, dwell: DwellModel, t_grid=None, mc: MonteCarlo = MonteCarlo()) -> StableFunctionClass:
    """Classify ``lam`` against one dwell law from its mean window integrals.

    The bounds are conservative: grid maxima of ``mean + 3 * std_error``.
    Growth of the estimates toward the end of the grid marks the function
    UNCLASSIFIED because no uniform bound in ``t`` is in sight.
    """
    if t_grid is None:
        t_grid = default_t_grid()
    est = mean_integral(lam, dwell, t_grid, mc)
    upper = est.upper
    M_hat = float(np.max(upper))
    lam_bar = M_hat / est.dwell_mean
    notes = [f"grid: {len(est.t_grid)} start times on [{est.t_grid[0]:g}, {est.t_grid[-1]:g}]",
             f"{est.mc_samples} Monte Carlo samples per start time"]
    grows, why = _grows_at_end(est)
    if grows:
        notes.append(why)
        return StableFunctionClass(UNCLASSIFIED, lam_bar, M_hat, est, tuple(notes))
    notes.append("consistent with a uniform bound on the sampled grid (not a proof)")
    return StableFunctionClass(MUESF, lam_bar, M_hat, est, tuple(notes))


# --------------------------------------------------- deterministic stable functions

@dataclass(frozen=True)
class IntegralSeries:
    T: np.ndarray
    integral: np.ndarray
    verdict: bool
    slope: float


def asf_check(lam, horizon: float, t0: float = 0.0, points: int = 1001) -> IntegralSeries:
    """Is ``int_{t0}^T lam`` consistent with divergence to minus infinity?

    Over the last decade of the horizon the least-squares slope must be negative
    and the second half of that decade must lie entirely below the first half.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    T = np.linspace(t0, t0 + horizon, points)
    I = cumulative_quad(lam, T)
    tail = T >= t0 + horizon / 10.0
    Tt, It = T[tail], I[tail]
    slope = float(np.polyfit(Tt - Tt[0], It, 1)[0]) if len(Tt) > 1 else 0.0
    mid = len(It) // 2
    verdict = bool(slope < 0 and len(It) > 1 and np.max(It[mid:]) < np.min(It[:mid]))
    return IntegralSeries(T, I, verdict, slope)


def uesf_check(lam, a: float, b: float, horizon: float, t0: float = 0.0, points: int = 4001) -> bool:
    """Check ``int_{t0}^t lam <= -a (t - t0) + b`` on a dense grid up to ``t0 + horizon``."""
    if not a > 0:
        raise ValueError("a must be positive")
    T = np.linspace(t0, t0 + horizon, points)
    I = cumulative_quad(lam, T)
    rhs = -a * (T - t0) + b
    slack = 1e-8 + 1e-12 * np.abs(rhs)
    return bool(np.all(I <= rhs + slack))
