"""Fragmentation of a feature over a system's elements, and fragmentation matrices.

Fragmentation is the size of the smallest subset ("partition") of system
elements whose joint state shares at least a threshold amount of information
with a feature.  Subsets are enumerated in combination order, by ascending
size, so every result is deterministic.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .infotheory import (StateTable, UsageError, entropy_from_codes,
                         joint_codes, variable_set)

# Slack when comparing an information value against a threshold; a subset
# that predicts a feature perfectly can fall short by float rounding.
MEET_TOL = 1e-9

DEFAULT_MAX_ELEMENTS = 20


@dataclass(frozen=True)
class Threshold:
    """How much shared information counts as "predicting" a feature.

    ``mode="fraction"`` resolves to ``value * I(feature; all elements)``;
    ``mode="bits"`` uses ``value`` directly.
    """

    value: float = 0.99
    mode: str = "fraction"

    def __post_init__(self):
        if self.mode not in ("fraction", "bits"):
            raise UsageError(f"unknown threshold mode {self.mode!r}")
        if not self.value > 0:
            raise UsageError("threshold value must be > 0")
        if self.mode == "fraction" and self.value > 1:
            raise UsageError("fraction threshold must be in (0, 1]")

    def resolve(self, total_bits: float) -> float:
        if self.mode == "fraction":
            return self.value * total_bits
        return float(self.value)


@dataclass(frozen=True)
class FragResult:
    """Outcome of :func:`fragmentation`.

    ``size`` is ``None`` when no subset reaches the threshold.  ``witnesses``
    are tuples of positions into the ``elements`` argument.
    """

    feature: tuple
    size: int | None
    witnesses: tuple
    threshold_bits: float

    @property
    def attainable(self) -> bool:
        return self.size is not None


class SubsetScorer:
    """Caches per-element symbol codes so subset entropies are cheap."""

    def __init__(self, table: StateTable, elements: Sequence[Sequence[int]]):
        if table.n_rows == 0:
            raise UsageError("table has no rows")
        self.table = table
        self.elements = [variable_set(e) for e in elements]
        if not self.elements:
            raise UsageError("at least one element is required")
        if any(not e for e in self.elements):
            raise UsageError("elements must be non-empty")
        seen: set = set()
        for e in self.elements:
            if seen & set(e):
                raise UsageError("elements must be disjoint")
            seen |= set(e)
        self._codes = []
        self._cards = []
        for e in self.elements:
            _, dense = np.unique(joint_codes(table, e), return_inverse=True)
            dense = dense.reshape(-1).astype(np.int64)
            self._codes.append(dense)
            self._cards.append(int(dense.max()) + 1)
        self.columns = frozenset(seen)
        self._part_cache: dict = {}

    @property
    def n(self) -> int:
        return len(self.elements)

    def subset_codes(self, subset: Sequence[int]) -> tuple:
        """Dense joint code and its cardinality for a subset of elements."""
        hit = self._part_cache.get(subset)
        if hit is not None:
            return hit
        code = np.zeros(self.table.n_rows, dtype=np.int64)
        card = 1
        for k in subset:
            code = code * self._cards[k] + self._codes[k]
            card *= self._cards[k]
            if card > 2 ** 40:
                _, code = np.unique(code, return_inverse=True)
                code = code.reshape(-1).astype(np.int64)
                card = int(code.max()) + 1
        out = (code, card)
        if len(self._part_cache) < 4096:
            self._part_cache[tuple(subset)] = out
        return out

    def feature_codes(self, feature: Sequence[int]) -> tuple:
        fs = variable_set(feature)
        if not fs:
            raise UsageError("feature must name at least one column")
        if self.columns & set(fs):
            raise UsageError("feature columns overlap the system elements")
        _, dense = np.unique(joint_codes(self.table, fs), return_inverse=True)
        dense = dense.reshape(-1).astype(np.int64)
        return dense, int(dense.max()) + 1

    def subset_entropy(self, subset: Sequence[int]) -> float:
        return entropy_from_codes(self.subset_codes(tuple(subset))[0])

    def shared(self, subset: Sequence[int], fcode: np.ndarray, fcard: int,
               h_feature: float) -> float:
        """I(subset; feature) in bits, clamped at zero."""
        code, _ = self.subset_codes(tuple(subset))
        h_sub = entropy_from_codes(code)
        h_joint = entropy_from_codes(code * fcard + fcode)
        mi = h_sub + h_feature - h_joint
        return mi if mi > 0.0 else 0.0


def _feature_context(scorer: SubsetScorer, feature):
    fcode, fcard = scorer.feature_codes(feature)
    h_f = entropy_from_codes(fcode)
    total = scorer.shared(tuple(range(scorer.n)), fcode, fcard, h_f)
    return fcode, fcard, h_f, total


def fragmentation(table: StateTable, feature: Sequence[int],
                  elements: Sequence[Sequence[int]],
                  threshold: Threshold = Threshold()) -> FragResult:
    """Smallest number of elements sharing at least the threshold with ``feature``.

    Stops at the first subset size that has any qualifying subset and
    reports every qualifying subset of that size.  Under a fraction
    threshold, a feature carrying no recoverable information gets size 0.
    """
    scorer = SubsetScorer(table, elements)
    fcode, fcard, h_f, total = _feature_context(scorer, feature)
    fs = variable_set(feature)
    thr = threshold.resolve(total)
    if threshold.mode == "fraction" and (h_f == 0.0 or total <= 0.0):
        return FragResult(fs, 0, (), thr)
    for size in range(1, scorer.n + 1):
        witnesses = tuple(
            s for s in combinations(range(scorer.n), size)
            if scorer.shared(s, fcode, fcard, h_f) >= thr - MEET_TOL)
        if witnesses:
            return FragResult(fs, size, witnesses, thr)
    return FragResult(fs, None, (), thr)


@dataclass(frozen=True)
class EnumerationSpec:
    """Which partition sizes a fragmentation matrix materializes.

    ``sizes=None`` requests the whole power set, allowed only up to
    ``max_elements`` elements.  ``include_full`` adds the single all-element
    partition even when its size is not listed.
    """

    sizes: tuple | None = (1, 2, 3)
    include_full: bool = True
    max_elements: int = DEFAULT_MAX_ELEMENTS

    def materialized(self, n: int) -> list:
        if self.sizes is None:
            if n > self.max_elements:
                raise UsageError(
                    f"full power set of {n} elements exceeds the cap of "
                    f"{self.max_elements}")
            return list(range(1, n + 1))
        sizes = sorted(set(int(s) for s in self.sizes))
        if any(s < 1 for s in sizes):
            raise UsageError("partition sizes must be >= 1")
        if any(s > n for s in sizes):
            raise UsageError(f"partition size exceeds element count {n}")
        if self.include_full and n not in sizes:
            sizes.append(n)
        return sizes

    def omitted(self, n: int) -> list:
        kept = set(self.materialized(n))
        return [s for s in range(1, n + 1) if s not in kept]

    def to_dict(self) -> dict:
        return {"sizes": None if self.sizes is None else list(self.sizes),
                "include_full": self.include_full,
                "max_elements": self.max_elements}

    @classmethod
    def from_dict(cls, d: dict) -> "EnumerationSpec":
        sizes = d.get("sizes")
        return cls(None if sizes is None else tuple(sizes),
                   bool(d.get("include_full", True)),
                   int(d.get("max_elements", DEFAULT_MAX_ELEMENTS)))


def enumerate_partitions(n: int, spec: EnumerationSpec) -> list:
    out = []
    for size in spec.materialized(n):
        out.extend(combinations(range(n), size))
    return out


@dataclass(eq=False)
class FragmentationMatrix:
    """Features x partitions grid of shared information, with margins.

    ``cells[f, p]`` is ``I(feature f; partition p)``, divided by the
    feature's total shared information with all elements when
    ``normalized`` (0/0 is 0).  Margins: ``feature_entropy`` and
    ``feature_total`` per feature row, ``partition_entropy`` per column.
    """

    feature_names: list
    features: list
    element_names: list
    elements: list
    partitions: list
    cells: np.ndarray
    feature_entropy: np.ndarray
    feature_total: np.ndarray
    partition_entropy: np.ndarray
    enumeration: EnumerationSpec = field(default_factory=EnumerationSpec)
    normalized: bool = True

    @property
    def partition_labels(self) -> list:
        return ["+".join(self.element_names[k] for k in p)
                for p in self.partitions]

    @property
    def omitted_sizes(self) -> list:
        return self.enumeration.omitted(len(self.elements))

    def raw_bits(self) -> np.ndarray:
        if not self.normalized:
            return self.cells.copy()
        return self.cells * self.feature_total[:, None]

    def minima(self, threshold: Threshold = Threshold()) -> list:
        """Smallest materialized partitions meeting ``threshold`` per feature.

        Returns one list of partitions (element-position tuples) per feature;
        empty when nothing meets it or the feature carries no information.
        """
        raw = self.raw_bits()
        out = []
        for f in range(len(self.features)):
            total = float(self.feature_total[f])
            thr = threshold.resolve(total)
            if threshold.mode == "fraction" and total <= 0.0:
                out.append([])
                continue
            best: list = []
            best_size = None
            for p, part in enumerate(self.partitions):
                if best_size is not None and len(part) > best_size:
                    break
                if raw[f, p] >= thr - MEET_TOL:
                    best_size = len(part)
                    best.append(part)
            out.append(best)
        return out

    def equals(self, other: "FragmentationMatrix", tol: float = 1e-12) -> bool:
        return (self.feature_names == other.feature_names
                and [tuple(f) for f in self.features]
                == [tuple(f) for f in other.features]
                and self.element_names == other.element_names
                and [tuple(e) for e in self.elements]
                == [tuple(e) for e in other.elements]
                and [tuple(p) for p in self.partitions]
                == [tuple(p) for p in other.partitions]
                and self.enumeration == other.enumeration
                and self.normalized == other.normalized
                and self.cells.shape == other.cells.shape
                and np.allclose(self.cells, other.cells, rtol=0, atol=tol)
                and np.allclose(self.feature_entropy, other.feature_entropy,
                                rtol=0, atol=tol)
                and np.allclose(self.feature_total, other.feature_total,
                                rtol=0, atol=tol)
                and np.allclose(self.partition_entropy,
                                other.partition_entropy, rtol=0, atol=tol))


def _matrix_chunk(table, elements, features, partitions):
    scorer = SubsetScorer(table, elements)
    contexts = [_feature_context(scorer, f) for f in features]
    cols = []
    for part in partitions:
        h_p = scorer.subset_entropy(part)
        vals = [scorer.shared(part, fc, fk, hf) for fc, fk, hf, _ in contexts]
        cols.append((h_p, vals))
    return cols


def fragmentation_matrix(table: StateTable, features: Sequence[Sequence[int]],
                         elements: Sequence[Sequence[int]],
                         enumeration: EnumerationSpec = EnumerationSpec(),
                         normalize: bool = True,
                         feature_names: Sequence[str] | None = None,
                         element_names: Sequence[str] | None = None,
                         workers: int = 1) -> FragmentationMatrix:
    """Shared information between every feature and every enumerated partition.

    Partitions are ordered by size, then lexicographically by element
    position.  ``workers > 1`` splits the partition columns across
    processes; the result does not depend on the worker count.
    """
    scorer = SubsetScorer(table, elements)
    features = [variable_set(f) for f in features]
    if not features:
        raise UsageError("at least one feature is required")
    contexts = [_feature_context(scorer, f) for f in features]
    partitions = enumerate_partitions(scorer.n, enumeration)

    if workers > 1 and len(partitions) > 1:
        chunks = np.array_split(np.arange(len(partitions)), workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_matrix_chunk, table, scorer.elements,
                                   features, [partitions[i] for i in c])
                       for c in chunks if len(c)]
            cols = [col for fut in futures for col in fut.result()]
    else:
        cols = _matrix_chunk(table, scorer.elements, features, partitions)

    raw = np.array([vals for _, vals in cols], dtype=float).T.reshape(
        len(features), len(partitions))
    part_h = np.array([h for h, _ in cols], dtype=float)
    f_h = np.array([c[2] for c in contexts], dtype=float)
    f_tot = np.array([c[3] for c in contexts], dtype=float)
    if normalize:
        denom = np.where(f_tot > 0, f_tot, 1.0)
        cells = np.where(f_tot[:, None] > 0, raw / denom[:, None], 0.0)
    else:
        cells = raw
    if feature_names is None:
        feature_names = ["&".join(table.names[c] for c in f) for f in features]
    if element_names is None:
        element_names = ["&".join(table.names[c] for c in e)
                         for e in scorer.elements]
    return FragmentationMatrix(
        feature_names=list(feature_names), features=features,
        element_names=list(element_names), elements=list(scorer.elements),
        partitions=partitions, cells=cells, feature_entropy=f_h,
        feature_total=f_tot, partition_entropy=part_h,
        enumeration=enumeration, normalized=normalize)


# -- serialization -----------------------------------------------------------

FEATURE_ENTROPY_COL = "H(feature)"
FEATURE_TOTAL_COL = "I(feature;all)"
PARTITION_ENTROPY_ROW = "H(partition)"


def _meta(m: FragmentationMatrix) -> dict:
    return {
        "format": "fragflow-matrix/1",
        "element_names": m.element_names,
        "elements": [list(e) for e in m.elements],
        "features": [list(f) for f in m.features],
        "enumeration": m.enumeration.to_dict(),
        "omitted_sizes": m.omitted_sizes,
        "normalized": m.normalized,
    }


def _f(x: float) -> str:
    return repr(float(x))


def serialize_matrix(m: FragmentationMatrix, fmt: str = "csv") -> bytes:
    """Encode a matrix as CSV or JSON bytes (lossless, deterministic)."""
    fmt = fmt.lower()
    if fmt == "json":
        doc = _meta(m)
        doc.update({
            "feature_names": m.feature_names,
            "partitions": [list(p) for p in m.partitions],
            "partition_labels": m.partition_labels,
            "cells": [[float(v) for v in row] for row in m.cells],
            "feature_entropy": [float(v) for v in m.feature_entropy],
            "feature_total": [float(v) for v in m.feature_total],
            "partition_entropy": [float(v) for v in m.partition_entropy],
        })
        return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode()
    if fmt != "csv":
        raise UsageError(f"unknown matrix format {fmt!r}")
    buf = io.StringIO()
    buf.write("# " + json.dumps(_meta(m), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", *m.partition_labels, FEATURE_ENTROPY_COL,
                FEATURE_TOTAL_COL])
    for k, name in enumerate(m.feature_names):
        w.writerow([name, *(_f(v) for v in m.cells[k]),
                    _f(m.feature_entropy[k]), _f(m.feature_total[k])])
    w.writerow([PARTITION_ENTROPY_ROW, *(_f(v) for v in m.partition_entropy),
                "", ""])
    return buf.getvalue().encode()


def parse_matrix(data: bytes | str, fmt: str = "csv") -> FragmentationMatrix:
    """Inverse of :func:`serialize_matrix`."""
    text = data.decode() if isinstance(data, bytes) else data
    fmt = fmt.lower()
    if fmt == "json":
        doc = json.loads(text)
        return FragmentationMatrix(
            feature_names=doc["feature_names"],
            features=[tuple(f) for f in doc["features"]],
            element_names=doc["element_names"],
            elements=[tuple(e) for e in doc["elements"]],
            partitions=[tuple(p) for p in doc["partitions"]],
            cells=np.array(doc["cells"], dtype=float).reshape(
                len(doc["features"]), len(doc["partitions"])),
            feature_entropy=np.array(doc["feature_entropy"], dtype=float),
            feature_total=np.array(doc["feature_total"], dtype=float),
            partition_entropy=np.array(doc["partition_entropy"], dtype=float),
            enumeration=EnumerationSpec.from_dict(doc["enumeration"]),
            normalized=doc["normalized"])
    if fmt != "csv":
        raise UsageError(f"unknown matrix format {fmt!r}")
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# "):
        raise UsageError("matrix CSV lacks its metadata line")
    meta = json.loads(lines[0][2:])
    rows = list(csv.reader(lines[1:]))
    header, body, last = rows[0], rows[1:-1], rows[-1]
    if last[0] != PARTITION_ENTROPY_ROW:
        raise UsageError("matrix CSV lacks the partition entropy row")
    names = meta["element_names"]
    lookup = {n: k for k, n in enumerate(names)}
    partitions = [tuple(lookup[n] for n in label.split("+"))
                  for label in header[1:-2]]
    n_p = len(partitions)
    return FragmentationMatrix(
        feature_names=[r[0] for r in body],
        features=[tuple(f) for f in meta["features"]],
        element_names=names,
        elements=[tuple(e) for e in meta["elements"]],
        partitions=partitions,
        cells=np.array([[float(v) for v in r[1:1 + n_p]] for r in body],
                       dtype=float).reshape(len(body), n_p),
        feature_entropy=np.array([float(r[1 + n_p]) for r in body]),
        feature_total=np.array([float(r[2 + n_p]) for r in body]),
        partition_entropy=np.array([float(v) for v in last[1:1 + n_p]]),
        enumeration=EnumerationSpec.from_dict(meta["enumeration"]),
        normalized=meta["normalized"])
