"""Simulation-free quantities of an absorbing chain.

Everything here reduces to linear systems in the internal block ``Q`` of
a transition matrix: ``(I - Q) x = b``. Birth-death chains use a
tridiagonal (Thomas) solve; everything else goes through dense LU with
partial pivoting, which is fine up to a few thousand internal states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .chain import ChangeOfMeasure, Kind

RESIDUAL_TOL = 1e-10
FIRST_STEP_MODES = ("conditioned", "nominal")


class SingularSystemError(ArithmeticError):
    """``I - Q`` is numerically singular: some states never get absorbed."""


class ZeroGammaError(ValueError):
    """The bad set cannot be reached, so conditioning on it is undefined."""

    def __init__(self, states):
        self.states = list(states)
        super().__init__(
            "hitting probability is zero from the good state; "
            f"reachable internal states with gamma = 0: {self.states}"
        )


class DegenerateModelError(ValueError):
    pass


def thomas_solve(lower, diag, upper, rhs):
    """Solve a tridiagonal system without pivoting.

    ``lower[i]`` is ``A[i + 1, i]`` and ``upper[i]`` is ``A[i, i + 1]``.
    ``rhs`` may be 1-d or 2-d (one column per right-hand side). Stable for
    the diagonally dominant M-matrices ``I - Q`` of birth-death chains.
    """
    diag = np.asarray(diag, dtype=float)
    m = len(diag)
    d = np.array(rhs, dtype=float)
    c = np.zeros(m)
    scale = np.max(np.abs(diag))
    for i in range(m):
        denom = diag[i] - (lower[i - 1] * c[i - 1] if i else 0.0)
        if abs(denom) <= 1e-14 * scale:
            raise SingularSystemError(f"zero pivot at row {i} of tridiagonal system")
        if i < m - 1:
            c[i] = upper[i] / denom
        d[i] = (d[i] - (lower[i - 1] * d[i - 1] if i else 0.0)) / denom
    for i in range(m - 2, -1, -1):
        d[i] = d[i] - c[i] * d[i + 1]
    return d


class InternalSystem:
    """Factorized ``I - Q`` for the internal block of a transition matrix."""

    def __init__(self, kinds, P, method="auto"):
        self.idx = np.flatnonzero(np.asarray(kinds) == Kind.INTERNAL)
        A = np.eye(len(self.idx)) - P[np.ix_(self.idx, self.idx)]
        self.A = A
        banded = not (np.triu(A, 2).any() or np.tril(A, -2).any())
        if method == "auto":
            method = "tridiagonal" if banded else "dense"
        if method == "tridiagonal" and not banded:
            raise ValueError("internal block is not tridiagonal")
        if method not in ("tridiagonal", "dense"):
            raise ValueError(f"unknown solver method {method!r}")
        self.method = method
        if method == "dense":
            self._lu = scipy.linalg.lu_factor(A, check_finite=True)
            piv = np.abs(np.diag(self._lu[0]))
            if piv.min() <= 1e-14 * max(piv.max(), 1.0):
                raise SingularSystemError("internal block I - Q is singular")

    def solve(self, b, transpose=False):
        if self.method == "dense":
            return scipy.linalg.lu_solve(self._lu, b, trans=1 if transpose else 0)
        A = self.A.T if transpose else self.A
        return thomas_solve(np.diag(A, -1), np.diag(A), np.diag(A, 1), b)

    @cached_property
    def fundamental(self):
        """``(I - Q)^{-1}``: expected visits between internal states."""
        return self.solve(np.eye(len(self.idx)))


@dataclass(frozen=True)
class GammaVector:
    """Probability of entering the bad set before the good state, per state."""

    values: np.ndarray
    hit_probability: float
    residual: float

    def __getitem__(self, x):
        return self.values[x]

    def __len__(self):
        return len(self.values)


def solve_gamma(model, method="auto", system=None) -> GammaVector:
    """Hitting probabilities ``gamma(x)`` from the first-step equations.

    ``gamma`` is 0 on the good state and 1 on bad states. The returned
    ``hit_probability`` is ``sum_y p(good, y) gamma(y)``.
    """
    P, kinds = model.P, model.kinds
    system = system or InternalSystem(kinds, P, method)
    T = system.idx
    bad = kinds == Kind.BAD
    rhs = P[T][:, bad].sum(axis=1)
    gamma = np.zeros(model.n_states)
    gamma[bad] = 1.0
    gamma[T] = system.solve(rhs)
    if not np.all(np.isfinite(gamma)):
        raise SingularSystemError("non-finite hitting probabilities")
    gamma[T] = np.clip(gamma[T], 0.0, 1.0)
    residual = float(np.max(np.abs(P[T] @ gamma - gamma[T]), initial=0.0))
    if residual > RESIDUAL_TOL:
        raise SingularSystemError(f"first-step residual {residual:.3g} exceeds {RESIDUAL_TOL}")
    g = model.good
    return GammaVector(gamma, float(P[g] @ gamma), residual)


class VisitQuantities:
    """Expected visit counts before absorption.

    ``v[x]`` counts visits to ``x`` starting at ``x`` (so ``v >= 1``;
    absorbing states get 1). ``u[x]`` counts visits to ``x`` starting at
    the good state; on a bad state it is the probability of being absorbed
    there. Pairwise reach probabilities come from :meth:`reach`, one
    linear solve per target.
    """

    def __init__(self, kinds, P, method="auto", system=None):
        self.kinds = np.asarray(kinds)
        self.P = P
        self.system = system or InternalSystem(kinds, P, method)
        self.good = int(np.flatnonzero(self.kinds == Kind.GOOD)[0])
        T = self.system.idx
        n = len(self.kinds)

        self.v = np.ones(n)
        self.v[T] = np.diag(self.system.fundamental)

        u_int = self.system.solve(P[self.good, T], transpose=True)
        self.u = np.zeros(n)
        self.u[self.good] = 1.0
        self.u[T] = u_int
        absorbing = self.kinds != Kind.INTERNAL
        self.u[absorbing] += (u_int @ P[T][:, absorbing]) + P[self.good, absorbing]
        self.u[self.good] = 1.0

    @classmethod
    def of(cls, model, measure=None, method="auto"):
        P = model.P if measure is None else measure.P
        return cls(model.kinds, P, method)

    def reach(self, x, y) -> float:
        """``f(x, y)``: probability of ever visiting ``y`` (at a time ``t > 0``) from ``x``."""
        T = self.system.idx
        pos = {int(s): i for i, s in enumerate(T)}
        if y in pos:
            e = np.zeros(len(T))
            e[pos[y]] = 1.0
            col = self.system.solve(e)
            h = col / col[pos[y]]
            h[pos[y]] = 1.0
            ret = 1.0 - 1.0 / col[pos[y]]
        else:
            h = self.system.solve(self.P[T, y])
            ret = 0.0
        if x in pos:
            return float(ret if x == y else h[pos[x]])
        if x == self.good:
            return float(self.P[x, y] + self.P[x, T] @ np.where(T == y, 0.0, h))
        return 0.0

    def fundamental_full(self):
        return self.system.fundamental


def optimal_measure(model, gamma=None, first_step="conditioned") -> ChangeOfMeasure:
    """Zero-variance transition matrix ``p(x, y) gamma(y) / gamma(x)``.

    Internal states with ``gamma = 0`` keep their nominal row and are
    flagged; the conditioned chain never enters them. With
    ``first_step="conditioned"`` the good state's row is reweighted by
    ``gamma`` as well, which is what makes the estimator exact; with
    ``"nominal"`` it is copied from the model.
    """
    if first_step not in FIRST_STEP_MODES:
        raise ValueError(f"first_step must be one of {FIRST_STEP_MODES}")
    gamma = gamma if gamma is not None else solve_gamma(model)
    gv = gamma.values
    P = model.P
    g = model.good
    if gamma.hit_probability <= 0:
        raise ZeroGammaError(_reachable_internal(model))

    Popt = P.copy()
    flagged = np.zeros(model.n_states, dtype=bool)
    # normalizing p(x, .) gamma(.) equals dividing by gamma(x) up to solver rounding
    for x in model.internal:
        w = P[x] * gv
        if gv[x] > 0 and w.sum() > 0:
            Popt[x] = w / w.sum()
        else:
            flagged[x] = True
    if first_step == "conditioned":
        w = P[g] * gv
        Popt[g] = w / w.sum()
    return ChangeOfMeasure(Popt, flagged=flagged, label=f"optimal[{first_step}]")


def _reachable_internal(model):
    seen = {model.good}
    stack = [model.good]
    while stack:
        x = stack.pop()
        for y in model.successors(x):
            y = int(y)
            if y not in seen and model.kinds[y] == Kind.INTERNAL:
                seen.add(y)
                stack.append(y)
    seen.discard(model.good)
    return sorted(seen)


def expected_joint_counts(model, x, y, gamma=None, visits=None) -> float:
    """``E[1_A N(x, y) | X(0) = x]`` in closed form ``v(x) p(x, y) gamma(y)``."""
    if model.kinds[x] != Kind.INTERNAL:
        raise ValueError(f"state {x} is not internal")
    gamma = gamma if gamma is not None else solve_gamma(model)
    visits = visits if visits is not None else VisitQuantities.of(model)
    return float(visits.v[x] * model.P[x, y] * gamma.values[y])


def ce_measure_closed_form(model, gamma=None, visits=None) -> ChangeOfMeasure:
    """Cross-entropy optimum from exact expected transition counts.

    Row ``x`` is proportional to ``E[1_A N(x, y) | X(0) = good]``, which
    factors as ``f(good, x) v(x) p(x, y) gamma(y)``. Rows that are never
    visited jointly with the rare event keep the nominal row, flagged.
    """
    gamma = gamma if gamma is not None else solve_gamma(model)
    visits = visits if visits is not None else VisitQuantities.of(model)
    P = model.P
    g = model.good
    T = model.internal
    reach_from_good = visits.u / visits.v
    numer = np.zeros_like(P)
    numer[T] = (reach_from_good[T] * visits.v[T])[:, None] * P[T] * gamma.values[None, :]
    numer[g] = P[g] * gamma.values
    denom = numer.sum(axis=1)
    if denom[g] <= 0:
        raise DegenerateModelError("the rare event has probability zero from the good state")
    Pce = P.copy()
    flagged = np.zeros(model.n_states, dtype=bool)
    for x in [g, *T]:
        if denom[x] > 0:
            Pce[x] = numer[x] / denom[x]
        else:
            flagged[x] = True
    return ChangeOfMeasure(Pce, flagged=flagged, label="cross-entropy[exact]")


def expected_transition_counts(model, measure):
    """``E*[N(x, y) | X(0) = good]`` under the measure's own dynamics."""
    Q = measure.P
    visits = VisitQuantities(model.kinds, Q)
    counts = np.zeros_like(Q)
    src = [model.good, *model.internal]
    counts[src] = visits.u[src][:, None] * Q[src]
    return counts


def kl_distance(model, reference, candidate) -> float:
    """Kullback-Leibler distance between path laws, ``D(reference || candidate)``.

    Sums ``log(ref / cand)`` over edges weighted by the expected number of
    traversals under the reference. Returns ``inf`` when the candidate
    misses an edge the reference uses.
    """
    R, C = reference.P, candidate.P
    counts = expected_transition_counts(model, reference)
    used = (counts > 0) & (R > 0)
    if np.any(used & (C <= 0)):
        return math.inf
    d = float(np.sum(counts[used] * (np.log(R[used]) - np.log(C[used]))))
    return max(d, 0.0)


def _tilted_moment(kinds, P_num, P_den, order):
    """``E_den[1_A (dP_num / dP_den)^order]`` started from the good state.

    Edges with ``P_den = 0`` are never sampled and contribute nothing.
    Returns ``inf`` when the tilted internal block has spectral radius >= 1.
    """
    kinds = np.asarray(kinds)
    with np.errstate(divide="ignore", invalid="ignore"):
        M = np.where(P_den > 0, P_num**order / P_den ** (order - 1), 0.0)
    T = np.flatnonzero(kinds == Kind.INTERNAL)
    bad = kinds == Kind.BAD
    g = int(np.flatnonzero(kinds == Kind.GOOD)[0])
    MT = M[np.ix_(T, T)]
    if len(T) and np.max(np.abs(np.linalg.eigvals(MT))) >= 1.0 - 1e-12:
        return math.inf
    rhs = M[T][:, bad].sum(axis=1)
    try:
        system = InternalSystem(kinds, M)
    except SingularSystemError:
        return math.inf
    m_int = system.solve(rhs)
    # one refinement step; the tilted block can be poorly scaled
    m_int = m_int + system.solve(rhs - system.A @ m_int)
    m = np.zeros(len(kinds))
    m[bad] = 1.0
    m[T] = m_int
    return float(M[g] @ m)


def exact_moment(model, measure, order=2) -> float:
    """``E*[(1_A dP/dP*)^order]`` by a linear solve; order 1 is the mean."""
    return _tilted_moment(model.kinds, model.P, measure.P, order)


def exact_second_moment(model, measure) -> float:
    """Exact second moment of one importance-sampling replication.

    ``inf`` signals a divergent moment (tilted system not contracting).
    """
    return exact_moment(model, measure, order=2)


def approx_gamma_maxpath(model, x) -> float:
    """Probability of the single most likely path from ``x`` into the bad set.

    Paths stay in internal states until the last step. Computed as a
    shortest path with edge lengths ``-log p``.
    """
    if model.kinds[x] != Kind.INTERNAL:
        raise ValueError(f"state {x} is not internal")
    P = model.P
    internal = model.kinds == Kind.INTERNAL
    keep = (P > 0) & internal[:, None] & (model.kinds != Kind.GOOD)[None, :]
    src, dst = np.nonzero(keep)
    graph = csr_matrix((-np.log(P[src, dst]), (src, dst)), shape=P.shape)
    dist = dijkstra(graph, directed=True, indices=x)
    best = dist[model.bad].min()
    return 0.0 if not np.isfinite(best) else float(np.exp(-best))


@dataclass
class ExactReport:
    gamma: GammaVector
    p_opt: ChangeOfMeasure
    p_ce: ChangeOfMeasure
    visits: VisitQuantities
    kl_to: dict = field(default_factory=dict)

    @property
    def hit_probability(self):
        return self.gamma.hit_probability


def exact_report(model, first_step="conditioned", candidates=None) -> ExactReport:
    """Bundle the exact quantities; ``candidates`` maps labels to measures to score by KL."""
    system = InternalSystem(model.kinds, model.P)
    gamma = solve_gamma(model, system=system)
    visits = VisitQuantities(model.kinds, model.P, system=system)
    p_opt = optimal_measure(model, gamma, first_step=first_step)
    p_ce = ce_measure_closed_form(model, gamma, visits)
    cands = {"nominal": ChangeOfMeasure.nominal(model), "cross-entropy": p_ce}
    cands.update(candidates or {})
    kl = {label: kl_distance(model, p_opt, m) for label, m in cands.items()}
    return ExactReport(gamma, p_opt, p_ce, visits, kl)
