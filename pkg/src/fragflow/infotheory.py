"""Exact discrete entropy and mutual information over observation tables.

All quantities are in bits and use plug-in (empirical frequency) estimates.
A :class:`StateTable` is an immutable rectangle of integer symbols; columns
are addressed by index, and any set of columns is treated as one joint
variable.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# Tolerance used when a mutual information comes out slightly negative.
MI_EPS = 1e-9


class UsageError(ValueError):
    """Raised when an operation is called with invalid arguments."""


@dataclass(frozen=True)
class StateTable:
    """Rows of discrete observations over named variables.

    ``rows`` has shape ``(n_rows, n_vars)``; column ``k`` holds symbols in
    ``[0, cardinalities[k])``.
    """

    names: tuple
    cardinalities: tuple
    rows: np.ndarray = field(repr=False)

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        cards = tuple(int(c) for c in self.cardinalities)
        rows = np.asarray(self.rows)
        if rows.ndim == 1 and len(names) == 1:
            rows = rows.reshape(-1, 1)
        if rows.ndim != 2:
            raise UsageError("rows must be a 2-D array")
        if len(names) != len(cards):
            raise UsageError("one cardinality per variable is required")
        if len(set(names)) != len(names):
            raise UsageError("variable names must be unique")
        if rows.shape[1] != len(names):
            raise UsageError(
                f"rows have {rows.shape[1]} columns, expected {len(names)}")
        if any(c < 1 for c in cards):
            raise UsageError("cardinalities must be positive")
        if rows.size and not np.issubdtype(rows.dtype, np.integer):
            if not np.all(np.equal(np.mod(rows, 1), 0)):
                raise UsageError("symbols must be integers")
        rows = rows.astype(np.int64, copy=True)
        if rows.size:
            if rows.min() < 0:
                raise UsageError("symbols must be non-negative")
            too_big = rows.max(axis=0) >= np.asarray(cards)
            if np.any(too_big):
                bad = names[int(np.flatnonzero(too_big)[0])]
                raise UsageError(f"symbol out of range in column {bad!r}")
        rows.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "cardinalities", cards)
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_array(cls, rows, names=None, cardinalities=None) -> "StateTable":
        """Build a table, inferring names (``x0, x1, ...``) and cardinalities
        (``max + 1``, at least 2) when they are not given."""
        rows = np.asarray(rows, dtype=np.int64)
        if rows.ndim == 1:
            rows = rows.reshape(-1, 1)
        n_vars = rows.shape[1]
        if names is None:
            names = [f"x{k}" for k in range(n_vars)]
        if cardinalities is None:
            if rows.shape[0]:
                cardinalities = np.maximum(rows.max(axis=0) + 1, 2).tolist()
            else:
                cardinalities = [2] * n_vars
        return cls(tuple(names), tuple(cardinalities), rows)

    @classmethod
    def from_csv(cls, path, columns: Sequence[str] | None = None,
                 cardinalities: dict | None = None) -> "StateTable":
        """Load selected columns (by header name) from a trace CSV."""
        with open(path, newline="") as fh:
            reader = csv.reader(line for line in fh if not line.startswith("#"))
            header = next(reader)
            data = [row for row in reader if row]
        if columns is None:
            columns = header
        missing = [c for c in columns if c not in header]
        if missing:
            raise UsageError(f"columns not in CSV header: {missing}")
        idx = [header.index(c) for c in columns]
        rows = np.array([[int(r[i]) for i in idx] for r in data],
                        dtype=np.int64).reshape(len(data), len(idx))
        cards = None
        if cardinalities is not None:
            inferred = (np.maximum(rows.max(axis=0) + 1, 2).tolist()
                        if len(data) else [2] * len(idx))
            cards = [cardinalities.get(c, inferred[k])
                     for k, c in enumerate(columns)]
        return cls.from_array(rows, names=columns, cardinalities=cards)

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def n_vars(self) -> int:
        return self.rows.shape[1]

    def index(self, names: Iterable[str] | str) -> tuple:
        """Column indices for ``names`` as a sorted variable set."""
        if isinstance(names, str):
            names = [names]
        try:
            return variable_set(self.names.index(n) for n in names)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def select_rows(self, mask) -> "StateTable":
        return StateTable(self.names, self.cardinalities, self.rows[mask])


def variable_set(indices: Iterable[int]) -> tuple:
    """Normalize column indices into a strictly increasing tuple."""
    return tuple(sorted(set(int(i) for i in indices)))


def _check(table: StateTable, vars_: Iterable[int]) -> tuple:
    if table.n_rows == 0:
        raise UsageError("entropy of an empty table is undefined")
    vs = variable_set(vars_)
    if vs and (vs[0] < 0 or vs[-1] >= table.n_vars):
        raise UsageError(f"variable index out of bounds: {vs}")
    return vs


def joint_codes(table: StateTable, vars_: Sequence[int]) -> np.ndarray:
    """One integer per row identifying the joint symbol of ``vars_``.

    Uses mixed-radix packing while it fits in 62 bits, otherwise falls back
    to row-wise unique labelling.
    """
    rows = table.rows
    if not vars_:
        return np.zeros(table.n_rows, dtype=np.int64)
    radix_bits = sum(int(np.ceil(np.log2(max(table.cardinalities[v], 2))))
                     for v in vars_)
    if radix_bits <= 62:
        code = np.zeros(table.n_rows, dtype=np.int64)
        for v in vars_:
            code = code * table.cardinalities[v] + rows[:, v]
        return code
    _, inverse = np.unique(rows[:, list(vars_)], axis=0, return_inverse=True)
    return inverse.reshape(-1).astype(np.int64)


def entropy_from_codes(codes: np.ndarray) -> float:
    """Shannon entropy in bits of the empirical distribution of ``codes``."""
    n = codes.shape[0]
    if n == 0:
        raise UsageError("entropy of an empty sample is undefined")
    _, counts = np.unique(codes, return_counts=True)
    if counts.shape[0] == 1:
        return 0.0
    # Sorted counts make the sum independent of symbol labelling.
    p = np.sort(counts) / n
    return float(-np.sum(p * np.log2(p)))


def entropy(table: StateTable, vars_: Iterable[int]) -> float:
    """Joint Shannon entropy (bits) of the columns ``vars_``.

    The empty set has entropy 0.
    """
    vs = _check(table, vars_)
    if not vs:
        return 0.0
    return entropy_from_codes(joint_codes(table, vs))


def mutual_information(table: StateTable, x: Iterable[int],
                       y: Iterable[int]) -> float:
    """``H(x) + H(y) - H(x, y)`` in bits.

    Overlapping columns count in both marginals but only once in the joint.
    Negative floating-point residue is clamped to zero.
    """
    xs = _check(table, x)
    ys = _check(table, y)
    h_joint = entropy(table, xs + ys)
    mi = entropy(table, xs) + entropy(table, ys) - h_joint
    return mi if mi > 0.0 else 0.0
