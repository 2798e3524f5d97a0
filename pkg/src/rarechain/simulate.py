"""Path sampling under a change of measure.

Each path draws from its own PCG64 stream derived from
``SeedSequence(seed, spawn_key=(*key, index))``, so a batch of paths is
reproducible bit for bit whatever the block order or worker count.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numba
import numpy as np
from joblib import Parallel, delayed

from .chain import ChangeOfMeasure, Kind, SamplePath

DEFAULT_MAX_STEPS = 10**7
BAD = int(Kind.BAD)
BLOCK_SIZE = 512

_OK, _DEAD_ROW, _STEP_LIMIT, _NEED_MORE = 0, 1, 2, 3
FIRST_CHUNK = 64


class DeadRowError(RuntimeError):
    """A visited state has no outgoing mass under the sampling measure."""


class StepLimitError(RuntimeError):
    """A path exceeded the step cap without being absorbed."""


def substream(seed, *key) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``; keys are non-negative ints."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))
    )


@numba.njit(nogil=True, cache=True)
def _walk(indptr, targets, cum, logratio, kinds, x, logw, t, u, buf, max_steps):
    # consumes uniforms from u; returns _NEED_MORE to be resumed with a fresh chunk
    k = 0
    while True:
        lo = indptr[x]
        hi = indptr[x + 1]
        if hi == lo:
            return _DEAD_ROW, x, logw, t, buf
        if t >= max_steps:
            return _STEP_LIMIT, x, logw, t, buf
        if k == u.shape[0]:
            return _NEED_MORE, x, logw, t, buf
        r = u[k]
        k += 1
        j = hi - 1
        for e in range(lo, hi - 1):
            if r < cum[e]:
                j = e
                break
        if t >= buf.shape[0]:
            bigger = np.empty(2 * buf.shape[0], dtype=buf.dtype)
            bigger[: buf.shape[0]] = buf
            buf = bigger
        buf[t] = j
        t += 1
        logw += logratio[j]
        x = targets[j]
        if kinds[x] != 0:
            return _OK, x, logw, t, buf


@numba.njit(nogil=True, cache=True)
def _accumulate(acc, shift, buf, t, logw):
    # acc holds sum_i exp(logw_i - shift[0]) * N_i(edge); rescale when the max grows
    if logw == -np.inf:
        return
    if logw > shift[0]:
        if shift[0] != -np.inf:
            acc *= np.exp(shift[0] - logw)
        shift[0] = logw
    w = np.exp(logw - shift[0])
    for s in range(t):
        acc[buf[s]] += w


class _CompiledMeasure:
    """CSR view of a sampling measure with per-edge nominal log ratios."""

    def __init__(self, model, measure):
        if measure.n_states != model.n_states:
            raise ValueError(
                f"measure has {measure.n_states} states, model has {model.n_states}"
            )
        Q = measure.P
        n = model.n_states
        src, dst = np.nonzero(Q > 0)
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.indptr, src + 1, 1)
        self.indptr = np.cumsum(self.indptr)
        self.src = src.astype(np.int64)
        self.targets = dst.astype(np.int64)
        q = Q[src, dst]
        cum = np.empty_like(q)
        for x in range(n):
            lo, hi = self.indptr[x], self.indptr[x + 1]
            if hi > lo:
                cum[lo:hi] = np.cumsum(q[lo:hi])
                cum[hi - 1] = 1.0
        self.cum = cum
        p = model.P[src, dst]
        with np.errstate(divide="ignore"):
            self.logratio = np.log(p) - np.log(q)
        self.kinds = model.kinds.astype(np.int64)
        self.good = model.good
        self.n_states = n

    def walk(self, rng, max_steps, buf):
        """Run one path; uniforms are drawn from ``rng`` in growing chunks."""
        x, logw, t = self.good, 0.0, 0
        size = FIRST_CHUNK
        while True:
            status, x, logw, t, buf = _walk(
                self.indptr, self.targets, self.cum, self.logratio, self.kinds,
                x, logw, t, rng.random(size), buf, max_steps,
            )
            if status != _NEED_MORE:
                break
            size *= 2
        if status == _DEAD_ROW:
            raise DeadRowError(f"state {x} has no outgoing transitions under the sampling measure")
        if status == _STEP_LIMIT:
            raise StepLimitError(f"path not absorbed within {max_steps} steps (near-trap?)")
        return x, logw, t, buf


def sample_path(model, measure, rng, max_steps=DEFAULT_MAX_STEPS) -> SamplePath:
    """Sample one path from the good state until absorption.

    ``rng`` is a :class:`numpy.random.Generator`, typically from
    :func:`substream`.
    """
    cm = measure if isinstance(measure, _CompiledMeasure) else _CompiledMeasure(model, measure)
    x, logw, t, buf = cm.walk(rng, max_steps, np.empty(256, dtype=np.int64))
    edges = buf[:t]
    states = np.concatenate(([cm.good], cm.targets[edges]))
    counts = Counter(zip(cm.src[edges].tolist(), cm.targets[edges].tolist()))
    return SamplePath(
        states=states,
        hit_bad=bool(cm.kinds[x] == Kind.BAD),
        counts=dict(counts),
        log_weight=float(logw),
    )


@dataclass
class PathBatch:
    """Per-path summaries of a batch, plus optional weighted edge counts.

    ``weighted_counts[x, y] * exp(log_scale)`` equals
    ``sum_i 1{A_i} w_i N_i(x, y)`` with ``w_i`` the likelihood ratio.
    """

    hit: np.ndarray
    log_weight: np.ndarray
    length: np.ndarray
    weighted_counts: np.ndarray | None = None
    log_scale: float = -np.inf

    @property
    def n_paths(self):
        return len(self.hit)

    @property
    def n_hits(self):
        return int(self.hit.sum())

    def values(self):
        """Importance-sampling replications ``1{A_i} * w_i``."""
        return np.where(self.hit, np.exp(self.log_weight), 0.0)


def _run_block(cm, seed, key, start, stop, max_steps, collect):
    m = stop - start
    hit = np.zeros(m, dtype=bool)
    logw = np.zeros(m)
    length = np.zeros(m, dtype=np.int64)
    acc = np.zeros(len(cm.targets)) if collect else None
    shift = np.array([-np.inf])
    buf = np.empty(1024, dtype=np.int64)
    for j, i in enumerate(range(start, stop)):
        x, lw, t, buf = cm.walk(substream(seed, *key, i), max_steps, buf)
        hit[j] = cm.kinds[x] == BAD
        logw[j] = lw
        length[j] = t
        if collect and hit[j]:
            _accumulate(acc, shift, buf, t, lw)
    return hit, logw, length, acc, shift[0]


def run_paths(model, measure, n_paths, seed, key=(), collect_counts=False,
              n_jobs=1, max_steps=DEFAULT_MAX_STEPS) -> PathBatch:
    """Sample ``n_paths`` independent paths, path ``i`` on stream ``(seed, *key, i)``.

    Blocks of fixed size are reduced in index order, so results do not
    depend on ``n_jobs``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    if not isinstance(measure, ChangeOfMeasure):
        raise TypeError("measure must be a ChangeOfMeasure")
    cm = _CompiledMeasure(model, measure)
    bounds = [(s, min(s + BLOCK_SIZE, n_paths)) for s in range(0, n_paths, BLOCK_SIZE)]
    if n_jobs == 1 or len(bounds) == 1:
        blocks = [_run_block(cm, seed, key, a, b, max_steps, collect_counts) for a, b in bounds]
    else:
        blocks = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_run_block)(cm, seed, key, a, b, max_steps, collect_counts) for a, b in bounds
        )
    batch = PathBatch(
        hit=np.concatenate([b[0] for b in blocks]),
        log_weight=np.concatenate([b[1] for b in blocks]),
        length=np.concatenate([b[2] for b in blocks]),
    )
    if collect_counts:
        shifts = np.array([b[4] for b in blocks])
        total = np.zeros(len(cm.targets))
        scale = shifts.max()
        if scale > -np.inf:
            for b, s in zip(blocks, shifts):
                if s > -np.inf:
                    total += b[3] * np.exp(s - scale)
        W = np.zeros((model.n_states, model.n_states))
        W[cm.src, cm.targets] = total
        batch.weighted_counts = W
        batch.log_scale = float(scale)
    return batch
