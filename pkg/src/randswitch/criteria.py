"""Closed-form almost-sure stability criteria from per-mode bounds and switching statistics.

All criteria are sufficient conditions: a negative value certifies, anything
else is inconclusive (never "unstable").
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

PHI = "PHI"  # E[phi_i(S_i)]
M = "M"  # mean bound M_i
LAMBDA_BAR = "LAMBDA_BAR"  # exponential rate bound
KINDS = (PHI, M, LAMBDA_BAR)

CERTIFIED = "certified"
INCONCLUSIVE = "inconclusive"

_IDS = {
    "semi_markov": {PHI: "S4", M: "S4'", LAMBDA_BAR: "S4''"},
    "markov": {PHI: "M4", M: "M4'", LAMBDA_BAR: "M4''"},
    "renewal": {PHI: "R4", M: "R4'", LAMBDA_BAR: "R4''"},
}


class CriterionError(ValueError):
    pass


@dataclass(frozen=True)
class ModeBounds:
    kinds: tuple[str, ...]
    values: tuple[float, ...]
    mu: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.kinds) == len(self.values) == len(self.mu)):
            raise CriterionError("kinds, values and mu must have one entry per mode")
        for k in self.kinds:
            if k not in KINDS:
                raise CriterionError(f"unknown bound kind {k!r}")
        for i, m in enumerate(self.mu):
            if not m >= 1.0:
                raise CriterionError(f"mu_{i + 1} = {m} must be >= 1")

    @classmethod
    def uniform(cls, kind: str, values: Sequence[float], mu: Sequence[float]) -> "ModeBounds":
        return cls(tuple([kind] * len(values)), tuple(float(v) for v in values), tuple(float(m) for m in mu))

    def __len__(self):
        return len(self.values)

    def single_kind(self) -> str | None:
        return self.kinds[0] if len(set(self.kinds)) == 1 else None


@dataclass(frozen=True)
class Term:
    mode: int
    kind: str
    bound: float
    weight: float
    term: float


@dataclass(frozen=True)
class CriterionReport:
    criterion: str
    value: float
    terms: tuple[Term, ...]

    @property
    def verdict(self) -> str:
        return CERTIFIED if self.value < 0 else INCONCLUSIVE

    @property
    def certified(self) -> bool:
        return self.value < 0

    def to_text(self) -> str:
        lines = [f"criterion {self.criterion}",
                 f"{'mode':>4}  {'kind':<10}  {'bound':>12}  {'weight':>10}  {'term':>12}"]
        for t in self.terms:
            lines.append(f"{t.mode + 1:>4}  {t.kind:<10}  {t.bound:>12.6g}  {t.weight:>10.6g}  {t.term:>12.6g}")
        lines.append(f"value = {self.value:.6f} -> {self.verdict}")
        return "\n".join(lines)

    def to_csv_rows(self):
        for t in self.terms:
            yield (self.criterion, t.mode + 1, t.kind, t.bound, t.weight, t.term)


def _report(criterion: str, terms: list[Term]) -> CriterionReport:
    return CriterionReport(criterion, math.fsum(t.term for t in terms), tuple(terms))


def _vec(a, n: int, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float).ravel()
    if len(a) != n:
        raise CriterionError(f"{name} has length {len(a)}, expected {n}")
    return a


def _criterion_id(family: str, bounds: ModeBounds) -> str:
    kind = bounds.single_kind()
    return _IDS[family][kind] if kind else "MIXED"


def _semi_markov_terms(bounds: ModeBounds, pi, m) -> list[Term]:
    n = len(bounds)
    pi, m = _vec(pi, n, "pi"), _vec(m, n, "m")
    if np.any(m <= 0):
        raise CriterionError("mean dwell times must be positive")
    terms = []
    for i, (kind, v, mu) in enumerate(zip(bounds.kinds, bounds.values, bounds.mu)):
        if kind == LAMBDA_BAR:
            w = pi[i]
            terms.append(Term(i, kind, v, w, (v + math.log(mu) / m[i]) * w))
        else:
            w = pi[i] / m[i]
            terms.append(Term(i, kind, v, w, (v + math.log(mu)) * w))
    return terms


def semi_markov_criterion(bounds: ModeBounds, pi, m) -> CriterionReport:
    """Per-mode terms (b_i + ln mu_i) pi_i / m_i, or (lam_bar_i + ln mu_i / m_i) pi_i for rate bounds."""
    return _report(_criterion_id("semi_markov", bounds), _semi_markov_terms(bounds, pi, m))


def mixed_criterion(bounds: ModeBounds, pi, m) -> CriterionReport:
    """Semi-Markov criterion where each mode uses the weighting of its own bound kind."""
    return _report("MIXED", _semi_markov_terms(bounds, pi, m))


def markov_criterion(bounds: ModeBounds, pi, q) -> CriterionReport:
    """Per-mode terms (b_i + ln mu_i) pi_i q_i, or (lam_bar_i + q_i ln mu_i) pi_i for rate bounds."""
    n = len(bounds)
    pi, q = _vec(pi, n, "pi"), _vec(q, n, "q")
    if np.any(q <= 0):
        raise CriterionError("exit rates q_i must be positive")
    terms = []
    for i, (kind, v, mu) in enumerate(zip(bounds.kinds, bounds.values, bounds.mu)):
        if kind == LAMBDA_BAR:
            w = pi[i]
            terms.append(Term(i, kind, v, w, (v + math.log(mu) * q[i]) * w))
        else:
            w = pi[i] * q[i]
            terms.append(Term(i, kind, v, w, (v + math.log(mu)) * w))
    return _report(_criterion_id("markov", bounds), terms)


def renewal_criterion(bounds: ModeBounds, p, theta: float, mu: float | None = None) -> CriterionReport:
    """(sum_i p_i b_i + ln mu) / theta, or sum_i p_i lam_bar_i + ln mu / theta for rate bounds.

    ``mu`` defaults to the largest per-mode factor. The ``ln mu`` share is spread
    over the modes with weight ``p_i`` so that the terms still sum to the value.
    """
    n = len(bounds)
    p = _vec(p, n, "p")
    if not theta > 0:
        raise CriterionError("mean dwell theta must be positive")
    if mu is None:
        mu = max(bounds.mu)
    if not mu >= 1.0:
        raise CriterionError(f"common mu = {mu} must be >= 1")
    lnmu = math.log(mu)
    terms = []
    for i, (kind, v) in enumerate(zip(bounds.kinds, bounds.values)):
        if kind == LAMBDA_BAR:
            terms.append(Term(i, kind, v, p[i], p[i] * (v + lnmu / theta)))
        else:
            terms.append(Term(i, kind, v, p[i] / theta, p[i] * (v + lnmu) / theta))
    return _report(_criterion_id("renewal", bounds), terms)


def time_invariant_criterion(lam: Sequence[float], mu, which: str, *, pi=None, m=None, q=None,
                             p=None, theta: float | None = None) -> CriterionReport:
    """Constant-rate criteria: E1 (semi-Markov: pi, m), E2 (Markov: pi, q), E3 (renewal: p, theta, common mu)."""
    lam = [float(v) for v in lam]
    n = len(lam)
    if which == "E1":
        if pi is None or m is None or q is not None or p is not None:
            raise CriterionError("E1 needs exactly pi and m")
        mu = _vec(mu, n, "mu")
        pi, m = _vec(pi, n, "pi"), _vec(m, n, "m")
        terms = [Term(i, "LAMBDA", lam[i], pi[i], pi[i] * (lam[i] + math.log(mu[i]) / m[i])) for i in range(n)]
    elif which == "E2":
        if pi is None or q is None or m is not None or p is not None:
            raise CriterionError("E2 needs exactly pi and q")
        mu = _vec(mu, n, "mu")
        pi, q = _vec(pi, n, "pi"), _vec(q, n, "q")
        terms = [Term(i, "LAMBDA", lam[i], pi[i], pi[i] * (lam[i] + q[i] * math.log(mu[i]))) for i in range(n)]
    elif which == "E3":
        if p is None or theta is None or pi is not None or q is not None or m is not None:
            raise CriterionError("E3 needs exactly p and theta")
        if np.ndim(mu) != 0:
            raise CriterionError("E3 needs a single common mu")
        p = _vec(p, n, "p")
        lnmu = math.log(float(mu))
        terms = [Term(i, "LAMBDA", lam[i], p[i], p[i] * (lam[i] + lnmu / theta)) for i in range(n)]
    else:
        raise CriterionError(f"unknown time-invariant criterion {which!r}")
    return _report(which, terms)


def ges_exponent_bound(report: CriterionReport, p_env: float) -> float:
    """Upper bound on limsup (1/t) ln|x(t)|: the certified criterion value divided by
    the exponent of the lower envelope c |x|^p <= V_i."""
    if not report.certified:
        raise CriterionError(f"criterion {report.criterion} is not certified (value {report.value:.6g})")
    if not p_env > 0:
        raise CriterionError("envelope exponent must be positive")
    return report.value / p_env
