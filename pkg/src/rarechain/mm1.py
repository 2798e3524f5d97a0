"""Embedded M/M/1 queue: overflow to level ``n`` before emptying.

The jump chain of the queue length moves up with probability
``p = lam / (lam + mu)`` and down with ``q = mu / (lam + mu)``. States above
``n`` cannot influence the event, so the model is the birth-death chain on
``0..n`` with 0 good and ``n`` bad.
"""

from __future__ import annotations

import math
import traceback
from dataclasses import dataclass, field, replace

import numpy as np

from .ce import CeConfig, ce_train
from .chain import ChangeOfMeasure, Kind, MarkovModel
from .exact import solve_gamma
from .importance import estimate, optimality_check

DESK_GRID = (10, 25, 50, 100)
FULL_GRID = tuple(range(10, 251, 10))


@dataclass(frozen=True)
class Mm1Params:
    lam: float
    mu: float
    n: int = 10

    def __post_init__(self):
        if not (self.lam > 0 and self.mu > 0):
            raise ValueError("rates must be positive")
        if not self.lam < self.mu:
            raise ValueError(f"unstable queue: lam={self.lam} >= mu={self.mu}")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"overflow level must be an integer >= 2, got {self.n}")

    @property
    def p(self):
        return self.lam / (self.lam + self.mu)

    @property
    def q(self):
        return self.mu / (self.lam + self.mu)

    @property
    def sigma(self):
        return self.mu / self.lam

    def with_n(self, n):
        return replace(self, n=n)


def build_mm1(params: Mm1Params) -> MarkovModel:
    n = params.n
    P = np.zeros((n + 1, n + 1))
    P[0, 1] = 1.0
    for x in range(1, n):
        P[x, x + 1] = params.p
        P[x, x - 1] = params.q
    P[n, n] = 1.0
    kinds = [Kind.GOOD] + [Kind.INTERNAL] * (n - 1) + [Kind.BAD]
    return MarkovModel(P, kinds)


def _log_sigma(params):
    return math.log(params.mu) - math.log(params.lam)


def mm1_gamma_analytic(params: Mm1Params, x) -> float:
    """``(1 - sigma^x) / (1 - sigma^n)`` evaluated without overflow or cancellation."""
    n = params.n
    if not 0 <= x <= n:
        raise ValueError(f"state {x} outside 0..{n}")
    s = _log_sigma(params)
    # sigma^(x-n) * (1 - sigma^-x) / (1 - sigma^-n)
    return math.exp((x - n) * s) * math.expm1(-x * s) / math.expm1(-n * s)


def mm1_popt_analytic(params: Mm1Params, x):
    """Zero-variance up/down probabilities at internal state ``x``."""
    if not 1 <= x <= params.n - 1:
        raise ValueError(f"state {x} is not internal")
    s = _log_sigma(params)
    down = params.q * math.exp(-s) * math.expm1(-(x - 1) * s) / math.expm1(-x * s)
    return 1.0 - down, down


def mm1_optimal_measure(params: Mm1Params) -> ChangeOfMeasure:
    n = params.n
    P = np.zeros((n + 1, n + 1))
    P[0, 1] = 1.0
    P[n, n] = 1.0
    for x in range(1, n):
        P[x, x + 1], P[x, x - 1] = mm1_popt_analytic(params, x)
    return ChangeOfMeasure(P, label="optimal[analytic]")


def mm1_fopt_recursion(params: Mm1Params) -> np.ndarray:
    """Expected visits ``v_opt(x)`` under the zero-variance chain, by backward recursion.

    ``r[x] = f_opt(x + 1, x)`` is the probability of ever stepping back
    down to ``x`` from ``x + 1``; it is 0 at ``x = n - 1`` since ``n``
    absorbs. Returns an array over states ``0..n`` (1 on the boundary).
    """
    n = params.n
    up = np.zeros(n + 1)
    down = np.zeros(n + 1)
    for x in range(1, n):
        up[x], down[x] = mm1_popt_analytic(params, x)
    r = np.zeros(n + 1)
    for x in range(n - 2, 0, -1):
        r[x] = down[x + 1] / (1.0 - up[x + 1] * r[x + 1])
    v = np.ones(n + 1)
    for x in range(1, n):
        f_xx = down[x] + up[x] * r[x]
        v[x] = 1.0 / (1.0 - f_xx)
    return v


def mm1_kl_closed_form(params: Mm1Params, candidate: ChangeOfMeasure) -> float:
    """``D(P_opt || candidate)`` as a sum over edges with weights ``v_opt(x) p_opt(x, y)``."""
    v = mm1_fopt_recursion(params)
    total = 0.0
    for x in range(1, params.n):
        for y, p_opt in zip((x + 1, x - 1), mm1_popt_analytic(params, x)):
            if p_opt == 0:
                continue
            c = candidate.P[x, y]
            if c <= 0:
                return math.inf
            total += v[x] * p_opt * (math.log(p_opt) - math.log(c))
    return total


def sample_size_rule(n, per_level=200, floor=2000):
    """CE sample size growing linearly with the overflow level."""
    return max(floor, per_level * n)


@dataclass
class SweepRecord:
    n: int
    exact_pa: float
    mean: float = math.nan
    re: float = math.nan
    re_of_mean: float = math.nan
    rat: float = math.nan
    rat_exact: float = math.nan
    kl: float = math.nan
    kl_over_abs_log_pa: float = math.nan
    kl_over_pa: float = math.nan
    hits: int = 0
    replications: int = 0
    ce_iterations: int = 0
    ce_samples: int = 0
    error: str = ""
    measure: ChangeOfMeasure | None = field(default=None, repr=False)

    @property
    def ok(self):
        return not self.error


@dataclass
class SweepResult:
    records: list

    def __iter__(self):
        return iter(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])


def run_sweep(lam, mu, n_grid=DESK_GRID, ce=None, replications=1000, seed=0,
              samples=sample_size_rule, n_jobs=1) -> SweepResult:
    """Train by cross-entropy, estimate and diagnose for every overflow level.

    ``samples`` is an int or a callable ``k(n)`` overriding
    ``ce.samples_per_iteration``. Cell ``n`` draws its streams under key
    ``(seed, n, 0, ...)`` for training and ``(seed, n, 1, ...)`` for
    estimation. Failures are recorded per row and the sweep continues.
    """
    if not n_grid:
        raise ValueError("empty grid")
    ce = ce or CeConfig()
    records = []
    for n in n_grid:
        params = Mm1Params(lam, mu, int(n))
        model = build_mm1(params)
        gamma = solve_gamma(model)
        k = samples(n) if callable(samples) else (samples or ce.samples_per_iteration)
        rec = SweepRecord(n=int(n), exact_pa=gamma.hit_probability, ce_samples=int(k))
        try:
            measure, trace = ce_train(model, replace(ce, samples_per_iteration=int(k)),
                                      seed, key=(int(n), 0), n_jobs=n_jobs)
            report = estimate(model, measure, replications, seed, key=(int(n), 1), n_jobs=n_jobs)
            diag = optimality_check(model, measure, report, gamma=gamma)
            rec.mean = report.mean
            rec.re = report.relative_error
            rec.re_of_mean = report.relative_error_of_mean
            rec.rat = report.rat
            rec.rat_exact = diag.rat_exact
            rec.kl = diag.kl
            rec.kl_over_abs_log_pa = diag.kl_over_abs_log_pa
            rec.kl_over_pa = diag.kl_over_pa
            rec.hits = report.hits
            rec.replications = report.replications
            rec.ce_iterations = len(trace)
            rec.measure = measure
        except Exception as exc:  # noqa: BLE001 - per-cell failure is data
            rec.error = f"{type(exc).__name__}: {exc}"
            rec.error += "" if str(exc) else traceback.format_exc(limit=1)
        records.append(rec)
    return SweepResult(records)
