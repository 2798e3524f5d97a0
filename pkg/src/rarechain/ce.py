"""Adaptive cross-entropy training of a tabular change of measure."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import ChangeOfMeasure, Kind, check_absolute_continuity
from .simulate import DEFAULT_MAX_STEPS, run_paths

INITIAL_MEASURES = ("uniform", "nominal")
ESS_FLOOR = 5.0


class NoHitsError(RuntimeError):
    """No sampled path reached the bad set, so the update is undefined."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class DegenerateWeightsError(RuntimeError):
    """Effective sample size of the hitting paths fell below the floor."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass
class CeConfig:
    """Settings for :func:`ce_train`.

    ``initial_measure`` is ``"uniform"`` (uniform over each row's nominal
    support), ``"nominal"``, or a :class:`ChangeOfMeasure`.
    """

    samples_per_iteration: int = 2000
    max_iterations: int = 10
    convergence_norm: float = 1e-3
    smoothing: float = 1.0
    initial_measure: object = "uniform"
    max_steps: int = DEFAULT_MAX_STEPS

    def __post_init__(self):
        if int(self.samples_per_iteration) < 1:
            raise ValueError("samples_per_iteration must be >= 1")
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.convergence_norm > 0:
            raise ValueError("convergence_norm must be positive")
        if not 0 < self.smoothing <= 1:
            raise ValueError("smoothing must lie in (0, 1]")
        if isinstance(self.initial_measure, str) and self.initial_measure not in INITIAL_MEASURES:
            raise ValueError(f"initial_measure must be one of {INITIAL_MEASURES} or a ChangeOfMeasure")


@dataclass
class CeIteration:
    iteration: int
    hits: int
    samples: int
    ess: float
    matrix_diff_norm: float
    measure: ChangeOfMeasure
    unvisited_rows: list = field(default_factory=list)


@dataclass
class CeTrace:
    records: list = field(default_factory=list)
    converged: bool = False

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def rows(self):
        return [(r.iteration, r.hits, r.ess, r.matrix_diff_norm) for r in self.records]


def uniform_measure(model) -> ChangeOfMeasure:
    """Uniform over the nominal support of every non-bad row."""
    P = model.P.copy()
    for x in [model.good, *model.internal]:
        support = model.P[x] > 0
        P[x] = np.where(support, 1.0 / support.sum(), 0.0)
    return ChangeOfMeasure(P, label="uniform")


def initial_measure(model, spec) -> ChangeOfMeasure:
    if isinstance(spec, ChangeOfMeasure):
        return spec
    if spec == "uniform":
        return uniform_measure(model)
    if spec == "nominal":
        return ChangeOfMeasure.nominal(model)
    raise ValueError(f"unknown initial measure {spec!r}")


def update_from_counts(model, weighted_counts, previous, smoothing=1.0):
    """Row-normalize hit-weighted transition counts into the next measure.

    Rows of the good and internal states with no weighted count keep the
    previous row. Returns the new measure and the list of such rows.
    """
    P_prev = previous.P
    P_new = P_prev.copy()
    unvisited = []
    for x in [model.good, *model.internal]:
        total = weighted_counts[x].sum()
        if total > 0:
            row = weighted_counts[x] / total
            if smoothing < 1:
                row = smoothing * row + (1 - smoothing) * P_prev[x]
            P_new[x] = row / row.sum()
        else:
            unvisited.append(int(x))
    flagged = np.zeros(model.n_states, dtype=bool)
    flagged[unvisited] = True
    return ChangeOfMeasure(P_new, flagged=flagged, label="cross-entropy"), unvisited


def ce_update(model, paths, previous, smoothing=1.0) -> ChangeOfMeasure:
    """One cross-entropy step from explicit sample paths.

    ``paths`` were sampled under ``previous``; each carries its likelihood
    ratio. The new row of state ``x`` is the weighted share of hitting
    paths' transitions out of ``x`` that go to each ``y``.
    """
    hitting = [p for p in paths if p.hit_bad]
    if not hitting:
        raise NoHitsError("no sampled path reached the bad set; choose a less rare initial measure")
    logw = np.array([p.log_weight for p in hitting])
    w = np.exp(logw - logw.max())
    counts = np.zeros((model.n_states, model.n_states))
    for wi, p in zip(w, hitting):
        for (x, y), n in p.counts.items():
            counts[x, y] += wi * n
    measure, _ = update_from_counts(model, counts, previous, smoothing)
    return measure


def effective_sample_size(log_weights) -> float:
    """Kish effective sample size ``(sum w)^2 / sum w^2``."""
    lw = np.asarray(log_weights, dtype=float)
    lw = lw[np.isfinite(lw)]
    if lw.size == 0:
        return 0.0
    w = np.exp(lw - lw.max())
    return float(w.sum() ** 2 / np.sum(w**2))


def ce_train(model, config, seed, key=(), n_jobs=1):
    """Iterate sample -> update from the initial measure.

    Iteration ``j`` samples path ``i`` on stream ``(seed, *key, j, i)``.
    Stops after ``max_iterations`` or once the max-abs change of the matrix
    drops below ``convergence_norm``.

    Returns
    -------
    measure : ChangeOfMeasure
    trace : CeTrace
    """
    current = initial_measure(model, config.initial_measure)
    check_absolute_continuity(model, current)
    trace = CeTrace()
    for j in range(config.max_iterations):
        batch = run_paths(
            model, current, int(config.samples_per_iteration), seed, key=(*key, j),
            collect_counts=True, n_jobs=n_jobs, max_steps=config.max_steps,
        )
        if batch.n_hits == 0:
            raise NoHitsError(
                f"iteration {j}: none of {batch.n_paths} paths reached the bad set; "
                "choose a less rare initial measure",
                trace,
            )
        ess = effective_sample_size(batch.log_weight[batch.hit])
        if ess < ESS_FLOOR:
            raise DegenerateWeightsError(
                f"iteration {j}: effective sample size {ess:.3g} below {ESS_FLOOR}", trace
            )
        new, unvisited = update_from_counts(model, batch.weighted_counts, current, config.smoothing)
        diff = new.max_abs_diff(current)
        trace.records.append(
            CeIteration(j, batch.n_hits, batch.n_paths, ess, diff, new, unvisited)
        )
        current = new
        if diff < config.convergence_norm:
            trace.converged = True
            break
    return current, trace
