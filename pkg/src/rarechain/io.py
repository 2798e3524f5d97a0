"""Chain text format and deterministic CSV output.

Chain files look like::

    # comment
    states 3
    state 0 G
    state 1 T
    state 2 F
    edge 0 1 1
    edge 1 2 0.01
    edge 1 0 0.99

Probabilities are decimal literals parsed with :func:`float`, which is
correctly rounded and locale independent. Floats are written with
``repr`` (shortest round-trip form).
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .chain import ChangeOfMeasure, Kind, MarkovModel


class ChainFormatError(ValueError):
    def __init__(self, line_no, message):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


def _int(tok, line_no, what):
    try:
        value = int(tok)
    except ValueError:
        raise ChainFormatError(line_no, f"{what} must be an integer, got {tok!r}") from None
    return value


def parse_chain_text(text):
    """Parse chain text into ``(kinds, P)`` without validating stochasticity."""
    n = None
    kinds = None
    P = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        head = tok[0]
        if head == "states":
            if n is not None:
                raise ChainFormatError(line_no, "duplicate 'states' line")
            if len(tok) != 2:
                raise ChainFormatError(line_no, "expected 'states N'")
            n = _int(tok[1], line_no, "state count")
            if n < 1:
                raise ChainFormatError(line_no, "state count must be positive")
            kinds = [None] * n
            P = np.zeros((n, n))
            continue
        if n is None:
            raise ChainFormatError(line_no, "'states N' must come first")
        if head == "state":
            if len(tok) != 3:
                raise ChainFormatError(line_no, "expected 'state <id> <G|F|T>'")
            x = _int(tok[1], line_no, "state id")
            if not 0 <= x < n:
                raise ChainFormatError(line_no, f"state id {x} out of range 0..{n - 1}")
            if kinds[x] is not None:
                raise ChainFormatError(line_no, f"state {x} declared twice")
            try:
                kinds[x] = Kind.from_letter(tok[2])
            except ValueError as exc:
                raise ChainFormatError(line_no, str(exc)) from None
        elif head == "edge":
            if len(tok) != 4:
                raise ChainFormatError(line_no, "expected 'edge <from> <to> <prob>'")
            x = _int(tok[1], line_no, "edge source")
            y = _int(tok[2], line_no, "edge target")
            if not (0 <= x < n and 0 <= y < n):
                raise ChainFormatError(line_no, f"edge {x} -> {y} references an undeclared state")
            try:
                p = float(tok[3])
            except ValueError:
                raise ChainFormatError(line_no, f"probability must be a decimal literal, got {tok[3]!r}") from None
            if not math.isfinite(p) or p < 0 or p > 1:
                raise ChainFormatError(line_no, f"probability {tok[3]} outside [0, 1]")
            if P[x, y] != 0:
                raise ChainFormatError(line_no, f"duplicate edge {x} -> {y}")
            P[x, y] = p
        else:
            raise ChainFormatError(line_no, f"unknown directive {head!r}")
    if n is None:
        raise ChainFormatError(0, "missing 'states N' line")
    missing = [x for x, k in enumerate(kinds) if k is None]
    if missing:
        raise ChainFormatError(0, f"states without a 'state' line: {missing}")
    for x, k in enumerate(kinds):
        if k == Kind.BAD and not P[x].any():
            P[x, x] = 1.0
    return kinds, P


def read_chain(path, check=True) -> MarkovModel:
    kinds, P = parse_chain_text(Path(path).read_text(encoding="utf-8"))
    return MarkovModel(P, kinds, check=check)


def read_measure(path, model) -> ChangeOfMeasure:
    """Read a measure stored in chain format; its partition must match ``model``."""
    kinds, P = parse_chain_text(Path(path).read_text(encoding="utf-8"))
    if len(kinds) != model.n_states:
        raise ChainFormatError(0, f"measure has {len(kinds)} states, model has {model.n_states}")
    if [int(k) for k in kinds] != model.kinds.tolist():
        raise ChainFormatError(0, "measure partition differs from the model's")
    return ChangeOfMeasure(P, label=str(path))


def fmt(value):
    """Shortest round-trip text for numbers; other values via ``str``."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def format_chain(kinds, P, header=()):
    out = io.StringIO()
    for line in header:
        out.write(f"# {line}\n")
    n = len(kinds)
    out.write(f"states {n}\n")
    for x, k in enumerate(kinds):
        out.write(f"state {x} {Kind(k).letter}\n")
    for x, y in zip(*np.nonzero(P)):
        out.write(f"edge {x} {y} {fmt(P[x, y])}\n")
    return out.getvalue()


def write_chain(path, kinds, P, header=()):
    Path(path).write_text(format_chain(kinds, P, header), encoding="utf-8")


def write_csv(path, columns, rows, header=()):
    """Write a CSV preceded by ``# ``-prefixed header lines."""
    buf = io.StringIO()
    for line in header:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path):
    """Read a CSV written by :func:`write_csv`, skipping header comments."""
    lines = [l for l in Path(path).read_text(encoding="utf-8").splitlines() if not l.startswith("#")]
    reader = csv.DictReader(lines)
    return list(reader)


def matrix_rows(P):
    """``(from, to, prob)`` rows for positive entries, row-major order."""
    return [(int(x), int(y), float(P[x, y])) for x, y in zip(*np.nonzero(P))]
