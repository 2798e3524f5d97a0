"""Finite absorbing Markov chains with a good/bad/internal partition.

A chain starts in its single good state, leaves it immediately and runs
until it enters the good state again or any bad state. The rare event is
absorption in a bad state.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np

ROW_TOL = 1e-12


class Kind(enum.IntEnum):
    INTERNAL = 0
    GOOD = 1
    BAD = 2

    @property
    def letter(self) -> str:
        return {Kind.INTERNAL: "T", Kind.GOOD: "G", Kind.BAD: "F"}[self]

    @classmethod
    def from_letter(cls, letter: str) -> "Kind":
        try:
            return {"T": cls.INTERNAL, "G": cls.GOOD, "F": cls.BAD}[letter]
        except KeyError:
            raise ValueError(f"unknown state kind {letter!r}, expected G, F or T") from None


class InvalidModelError(ValueError):
    """Raised when a transition matrix or partition breaks a model invariant."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "\n  ".join(str(v) for v in self.violations)
        super().__init__(f"invalid Markov model:\n  {lines}")


class InvalidTransitionError(ValueError):
    pass


@dataclass(frozen=True)
class Violation:
    state: int | None
    rule: str
    detail: str = ""

    def __str__(self):
        where = "model" if self.state is None else f"state {self.state}"
        return f"{where}: {self.rule}" + (f" ({self.detail})" if self.detail else "")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class MarkovModel:
    """Transition matrix plus partition of the states into kinds.

    Parameters
    ----------
    transitions : array_like, shape (n, n)
        Row-stochastic matrix ``p(x, y)``.
    kinds : sequence of Kind
        Kind of every state. Exactly one state must be GOOD.
    check : bool, default True
        Validate on construction and raise :class:`InvalidModelError` on
        any violation. Use ``check=False`` to inspect a broken model with
        :func:`validate_model`.
    """

    def __init__(self, transitions, kinds, check=True):
        P = _frozen(transitions)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError(f"transition matrix must be square, got shape {P.shape}")
        kinds = np.array([Kind(k) for k in kinds], dtype=np.int8)
        if kinds.shape != (P.shape[0],):
            raise ValueError("one kind per state required")
        kinds.setflags(write=False)
        self.P = P
        self.kinds = kinds
        if check:
            violations = validate_model(self)
            if violations:
                raise InvalidModelError(violations)

    @classmethod
    def from_edges(cls, n_states, kinds, edges, check=True):
        """Build from ``(source, target, probability)`` triples.

        Bad states without outgoing edges are made absorbing (self-loop),
        since their rows are never used for simulation.
        """
        P = np.zeros((n_states, n_states))
        for x, y, p in edges:
            P[x, y] += p
        for x, k in enumerate(kinds):
            if Kind(k) == Kind.BAD and not P[x].any():
                P[x, x] = 1.0
        return cls(P, kinds, check=check)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def good(self) -> int:
        return int(np.flatnonzero(self.kinds == Kind.GOOD)[0])

    @property
    def bad(self) -> np.ndarray:
        return np.flatnonzero(self.kinds == Kind.BAD)

    @property
    def internal(self) -> np.ndarray:
        return np.flatnonzero(self.kinds == Kind.INTERNAL)

    @property
    def absorbing_mask(self) -> np.ndarray:
        return self.kinds != Kind.INTERNAL

    def successors(self, x):
        return np.flatnonzero(self.P[x] > 0)

    def edges(self):
        """Iterate ``(x, y, p)`` over positive entries in row-major order."""
        xs, ys = np.nonzero(self.P)
        for x, y in zip(xs, ys):
            yield int(x), int(y), float(self.P[x, y])

    def __repr__(self):
        return (
            f"MarkovModel(n_states={self.n_states}, good={self.good}, "
            f"bad={self.bad.tolist()}, n_edges={int(np.count_nonzero(self.P))})"
        )


class ChangeOfMeasure:
    """Alternative transition matrix used for sampling.

    ``flagged`` marks rows that were not derived from data or from the
    hitting probabilities (inert rows of the zero-variance measure, rows a
    cross-entropy update never observed); they carry a fallback row.
    """

    def __init__(self, transitions, flagged=None, label=""):
        P = _frozen(transitions)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError(f"transition matrix must be square, got shape {P.shape}")
        if (P < 0).any() or (P > 1).any():
            raise ValueError("transition probabilities must lie in [0, 1]")
        deficit = np.abs(P.sum(axis=1) - 1.0)
        if (deficit > ROW_TOL).any():
            x = int(np.argmax(deficit))
            raise ValueError(f"row {x} of change of measure not stochastic (sum {P[x].sum()!r})")
        if flagged is None:
            flagged = np.zeros(P.shape[0], dtype=bool)
        flagged = np.array(flagged, dtype=bool)
        flagged.setflags(write=False)
        self.P = P
        self.flagged = flagged
        self.label = label

    @classmethod
    def nominal(cls, model):
        return cls(model.P, label="nominal")

    @property
    def n_states(self):
        return self.P.shape[0]

    def max_abs_diff(self, other) -> float:
        other = other.P if isinstance(other, ChangeOfMeasure) else np.asarray(other)
        return float(np.max(np.abs(self.P - other)))

    def __repr__(self):
        label = f", label={self.label!r}" if self.label else ""
        return f"ChangeOfMeasure(n_states={self.n_states}{label})"


@dataclass
class SamplePath:
    """One trajectory from the good state until absorption.

    ``counts`` maps each traversed edge ``(x, y)`` to its multiplicity.
    ``log_weight`` is the log likelihood ratio of the nominal model with
    respect to the sampling measure along the path.
    """

    states: np.ndarray
    hit_bad: bool
    counts: dict
    log_weight: float

    @property
    def length(self) -> int:
        return len(self.states) - 1

    @property
    def weight(self) -> float:
        return float(np.exp(self.log_weight))


def _can_reach(adjacency_rev, targets, through):
    """States that reach ``targets`` moving only through ``through`` states."""
    n = len(through)
    seen = np.zeros(n, dtype=bool)
    queue = deque(int(t) for t in targets)
    for t in queue:
        seen[t] = True
    while queue:
        y = queue.popleft()
        if not (through[y] or y in targets):
            continue
        for x in adjacency_rev[y]:
            if not seen[x]:
                seen[x] = True
                if through[x]:
                    queue.append(x)
    return seen


def _reverse_adjacency(P):
    rev = [[] for _ in range(P.shape[0])]
    for x, y in zip(*np.nonzero(P)):
        rev[y].append(int(x))
    return rev


def validate_model(model) -> list:
    """Check every model invariant and return the violations found.

    An empty list means the model is valid.
    """
    P, kinds = model.P, model.kinds
    out = []
    n_good = int(np.sum(kinds == Kind.GOOD))
    if n_good != 1:
        out.append(Violation(None, "exactly one good state required", f"found {n_good}"))
    if not np.any(kinds == Kind.BAD):
        out.append(Violation(None, "at least one bad state required"))

    for x in range(P.shape[0]):
        row = P[x]
        if np.any(row < 0) or np.any(row > 1):
            out.append(Violation(x, "probability outside [0, 1]"))
        s = float(row.sum())
        if abs(s - 1.0) > ROW_TOL:
            out.append(Violation(x, "row not stochastic", f"deficit {1.0 - s:.12g}"))

    if n_good == 1:
        g = model.good
        if P[g, g] != 0:
            out.append(Violation(g, "good state has a self-loop", f"p={P[g, g]!r}"))
        if np.any(P[g, kinds == Kind.BAD] > 0):
            out.append(Violation(g, "good state jumps to bad set"))

    internal = kinds == Kind.INTERNAL
    absorbing = np.flatnonzero(~internal)
    if len(absorbing):
        reach = _can_reach(_reverse_adjacency(P), set(absorbing.tolist()), internal)
        for x in np.flatnonzero(internal & ~reach):
            out.append(Violation(int(x), "absorbing set unreachable (trap)"))
    return out


def f_reachable_edges(model):
    """Mask of edges lying on some path from the good state into the bad set.

    Paths leave the good state and then move through internal states only.
    """
    P, kinds = model.P, model.kinds
    internal = kinds == Kind.INTERNAL
    bad = set(model.bad.tolist())
    to_bad = _can_reach(_reverse_adjacency(P), bad, internal) & (kinds != Kind.GOOD)

    g = model.good
    from_good = np.zeros(model.n_states, dtype=bool)
    from_good[g] = True
    queue = deque([g])
    while queue:
        x = queue.popleft()
        for y in np.flatnonzero(P[x] > 0):
            if internal[y] and not from_good[y]:
                from_good[y] = True
                queue.append(int(y))

    src = from_good & (internal | (np.arange(model.n_states) == g))
    mask = (P > 0) & src[:, None] & to_bad[None, :]
    return mask


def absolute_continuity_violation(model, measure):
    """First edge ``(x, y)`` needed to reach the bad set that ``measure`` cannot sample.

    Returns ``None`` when the indicator-weighted nominal law is absolutely
    continuous with respect to the measure.
    """
    if measure.n_states != model.n_states:
        raise ValueError(
            f"measure has {measure.n_states} states, model has {model.n_states}"
        )
    bad = f_reachable_edges(model) & (measure.P <= 0)
    if not bad.any():
        return None
    x, y = np.argwhere(bad)[0]
    return int(x), int(y)


class SupportError(ValueError):
    """Sampling measure misses an edge the nominal chain uses to reach the bad set."""

    def __init__(self, edge):
        self.edge = edge
        super().__init__(f"measure assigns zero probability to edge {edge[0]} -> {edge[1]}")


def check_absolute_continuity(model, measure):
    edge = absolute_continuity_violation(model, measure)
    if edge is not None:
        raise SupportError(edge)


def path_probability(model, states) -> float:
    """Probability that the nominal chain follows ``states`` step by step."""
    states = [int(s) for s in states]
    prob = 1.0
    for x, y in zip(states[:-1], states[1:]):
        p = model.P[x, y]
        if p <= 0:
            raise InvalidTransitionError(f"transition {x} -> {y} has zero probability")
        prob *= p
    return float(prob)


def random_chain(n_states, rng, n_bad=1, density=0.3):
    """Random valid model with state 0 good and the last ``n_bad`` states bad.

    Every internal state gets one edge to an absorbing or lower-indexed
    internal state, which rules out traps; the remaining support is drawn
    with probability ``density``. An upward spine through the internal
    states guarantees that the bad set is reachable from the good state.
    """
    rng = np.random.default_rng(rng)
    if n_states < n_bad + 2:
        raise ValueError("need at least one good and one internal state")
    kinds = [Kind.GOOD] + [Kind.INTERNAL] * (n_states - 1 - n_bad) + [Kind.BAD] * n_bad
    internal = list(range(1, n_states - n_bad))
    bad = list(range(n_states - n_bad, n_states))
    W = np.zeros((n_states, n_states))
    for i, x in enumerate(internal):
        escape = bad + [0] + internal[:i]
        W[x, rng.choice(escape)] = 1.0
        extra = rng.random(n_states) < density
        W[x, extra] = 1.0
    for a, b in zip(internal, internal[1:]):
        W[a, b] = 1.0
    W[internal[-1], rng.choice(bad)] = 1.0
    W[0, internal] = rng.random(len(internal)) < max(density, 1.0 / len(internal))
    W[0, internal[0]] = 1.0
    for x in range(n_states):
        if kinds[x] == Kind.BAD:
            W[x, x] = 1.0
            continue
        mask = W[x] > 0
        W[x, mask] = rng.uniform(0.05, 1.0, size=mask.sum())
        W[x] /= W[x].sum()
    return MarkovModel(W, kinds)
