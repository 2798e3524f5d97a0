"""Importance-sampling estimation of the hitting probability and its diagnostics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .chain import check_absolute_continuity
from .exact import exact_second_moment, kl_distance, optimal_measure, solve_gamma
from .simulate import DEFAULT_MAX_STEPS, run_paths

Z95 = 1.959963984540054
MIN_RELIABLE_HITS = 30


def _log_ratio(num, den):
    if num > 0 and den > 0 and den != 1.0:
        return math.log(num) / math.log(den)
    return math.nan


@dataclass
class EstimatorReport:
    """Summary of ``R`` replications of ``1{A} dP/dP*``.

    ``relative_error`` is the per-replication coefficient of variation
    ``sqrt(variance) / mean``; ``relative_error_of_mean`` divides it by
    ``sqrt(R)``. ``rat`` is ``log(second_moment) / log(mean)``.
    """

    mean: float
    second_moment: float
    variance: float
    relative_error: float
    relative_error_of_mean: float
    rat: float
    ci95_halfwidth: float
    replications: int
    seed: int
    hits: int

    @property
    def zero_hits(self):
        return self.hits == 0

    @property
    def ci_reliable(self):
        return self.hits >= MIN_RELIABLE_HITS

    def as_dict(self):
        return asdict(self)


def summarize(values, seed, hits) -> EstimatorReport:
    """Reduce per-replication values (ordered by replication index)."""
    values = np.asarray(values, dtype=float)
    R = len(values)
    mean = float(np.sum(values) / R)
    second = float(np.sum(values**2) / R)
    variance = float(np.sum((values - mean) ** 2) / R)
    if mean > 0:
        cv = math.sqrt(variance) / mean
        re_mean = cv / math.sqrt(R)
    else:
        cv = re_mean = math.nan
    return EstimatorReport(
        mean=mean,
        second_moment=second,
        variance=variance,
        relative_error=cv,
        relative_error_of_mean=re_mean,
        rat=_log_ratio(second, mean),
        ci95_halfwidth=Z95 * math.sqrt(variance / R),
        replications=R,
        seed=int(seed),
        hits=int(hits),
    )


def estimate(model, measure, replications, seed, key=(), n_jobs=1,
             max_steps=DEFAULT_MAX_STEPS, return_values=False):
    """Importance-sampling estimate of the probability of hitting the bad set.

    Replication ``i`` runs on stream ``(seed, *key, i)``. Raises
    :class:`~rarechain.chain.SupportError` when the measure cannot reach
    part of the event. A report with zero hits is valid (mean 0).
    """
    if int(replications) < 1:
        raise ValueError("replications must be positive")
    check_absolute_continuity(model, measure)
    batch = run_paths(model, measure, int(replications), seed, key=key,
                      n_jobs=n_jobs, max_steps=max_steps)
    values = batch.values()
    report = summarize(values, seed, batch.n_hits)
    return (report, values) if return_values else report


@dataclass
class OptimalityDiagnostics:
    """Quantities governing asymptotic optimality of a trained measure.

    ``kl`` is ``D(P_opt || trained)``. ``rat`` comes from the estimator
    report, ``rat_exact`` from exact moments, ``rat_vs_exact_pa`` uses the
    estimated second moment over the exact ``log P(A)``.
    """

    kl: float
    hit_probability: float
    log_pa: float
    kl_over_abs_log_pa: float
    kl_over_pa: float
    rat: float
    rat_exact: float
    rat_vs_exact_pa: float
    exact_second_moment: float


def optimality_check(model, trained, report=None, gamma=None) -> OptimalityDiagnostics:
    """Compare a trained measure with the zero-variance one."""
    gamma = gamma if gamma is not None else solve_gamma(model)
    pa = gamma.hit_probability
    p_opt = optimal_measure(model, gamma)
    kl = kl_distance(model, p_opt, trained)
    log_pa = math.log(pa)
    m2 = exact_second_moment(model, trained)
    return OptimalityDiagnostics(
        kl=kl,
        hit_probability=pa,
        log_pa=log_pa,
        kl_over_abs_log_pa=kl / abs(log_pa) if log_pa != 0 else math.nan,
        kl_over_pa=kl / pa,
        rat=report.rat if report is not None else math.nan,
        rat_exact=_log_ratio(m2, pa) if math.isfinite(m2) else math.nan,
        rat_vs_exact_pa=_log_ratio(report.second_moment, pa) if report is not None else math.nan,
        exact_second_moment=m2,
    )
