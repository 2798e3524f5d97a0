"""Estimator-style front end: ``fit`` learns a change of measure, ``estimate`` uses it.

The estimators follow scikit-learn conventions (constructor arguments
stored verbatim, learned state in trailing-underscore attributes,
``get_params``/``set_params``/``clone`` via :class:`~sklearn.base.BaseEstimator`).
The "data" passed to ``fit`` is the Markov model itself.
"""

from __future__ import annotations

import numbers
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .ce import INITIAL_MEASURES, CeConfig, ce_train
from .chain import ChangeOfMeasure, MarkovModel, check_absolute_continuity
from .exact import FIRST_STEP_MODES, optimal_measure, solve_gamma
from .importance import estimate, optimality_check
from .io import read_chain
from .mm1 import Mm1Params, build_mm1


def check_model(model) -> MarkovModel:
    """Coerce ``model`` into a validated :class:`MarkovModel`.

    Accepts a model, :class:`Mm1Params`, a chain-file path, or a
    ``(transitions, kinds)`` pair.
    """
    if isinstance(model, MarkovModel):
        return model
    if isinstance(model, Mm1Params):
        return build_mm1(model)
    if isinstance(model, (str, Path)):
        return read_chain(model)
    if isinstance(model, tuple) and len(model) == 2:
        return MarkovModel(*model)
    raise TypeError(f"cannot interpret {type(model).__name__} as a Markov model")


def check_measure(model, measure) -> ChangeOfMeasure:
    """Coerce to :class:`ChangeOfMeasure` and check it can sample the whole event."""
    if not isinstance(measure, ChangeOfMeasure):
        measure = ChangeOfMeasure(np.asarray(measure, dtype=float))
    check_absolute_continuity(model, measure)
    return measure


def check_seed(seed):
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, numbers.Integral) or seed < 0:
        raise ValueError(f"random_state must be a non-negative integer, got {seed!r}")
    return int(seed)


class _ImportanceSampler(BaseEstimator):
    def estimate(self, model=None, n_replications=None):
        """Run the replications under the fitted measure; stores ``report_``."""
        check_is_fitted(self, "measure_")
        model = self.model_ if model is None else check_model(model)
        R = self.n_replications if n_replications is None else n_replications
        self.report_ = estimate(model, self.measure_, R, check_seed(self.random_state),
                                key=(1,), n_jobs=self.n_jobs)
        return self.report_

    def diagnose(self, model=None):
        """Distance to the zero-variance measure and exact/estimated RAT."""
        check_is_fitted(self, "measure_")
        model = self.model_ if model is None else check_model(model)
        return optimality_check(model, self.measure_, getattr(self, "report_", None))

    def fit_estimate(self, model):
        return self.fit(model).estimate()


class CrossEntropyIS(_ImportanceSampler):
    """Importance sampling with a transition matrix trained by cross-entropy.

    Parameters
    ----------
    n_samples : int, default 2000
        Paths per cross-entropy iteration.
    max_iter : int, default 10
    tol : float, default 1e-3
        Stop when the max-abs change of the matrix falls below this.
    smoothing : float in (0, 1], default 1.0
        Weight of the new matrix when blending with the previous one.
    init : {"uniform", "nominal"} or ChangeOfMeasure, default "uniform"
    n_replications : int, default 1000
        Replications used by :meth:`estimate`.
    random_state : int, default 0
    n_jobs : int, default 1
        Worker threads; results do not depend on it.

    Attributes
    ----------
    measure_ : ChangeOfMeasure
    trace_ : CeTrace
    n_iter_ : int
    """

    def __init__(self, n_samples=2000, max_iter=10, tol=1e-3, smoothing=1.0, init="uniform",
                 n_replications=1000, random_state=0, n_jobs=1):
        self.n_samples = n_samples
        self.max_iter = max_iter
        self.tol = tol
        self.smoothing = smoothing
        self.init = init
        self.n_replications = n_replications
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, model, y=None):
        model = check_model(model)
        if isinstance(self.init, str) and self.init not in INITIAL_MEASURES:
            raise ValueError(f"init must be one of {INITIAL_MEASURES} or a ChangeOfMeasure")
        config = CeConfig(
            samples_per_iteration=self.n_samples,
            max_iterations=self.max_iter,
            convergence_norm=self.tol,
            smoothing=self.smoothing,
            initial_measure=self.init,
        )
        self.measure_, self.trace_ = ce_train(model, config, check_seed(self.random_state),
                                              key=(0,), n_jobs=self.n_jobs)
        self.n_iter_ = len(self.trace_)
        self.model_ = model
        return self


class ZeroVarianceIS(_ImportanceSampler):
    """Importance sampling under the exact zero-variance measure (validation oracle)."""

    def __init__(self, first_step="conditioned", n_replications=1000, random_state=0, n_jobs=1):
        self.first_step = first_step
        self.n_replications = n_replications
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, model, y=None):
        if self.first_step not in FIRST_STEP_MODES:
            raise ValueError(f"first_step must be one of {FIRST_STEP_MODES}")
        model = check_model(model)
        self.gamma_ = solve_gamma(model)
        self.measure_ = optimal_measure(model, self.gamma_, first_step=self.first_step)
        self.model_ = model
        return self
