"""scikit-learn style wrappers around fragmentation and flow-graph analysis.

``FragmentationSelector`` fits a fragmentation matrix of target features
against system elements and then acts as a feature selector keeping the
elements that appear in some minimal predicting partition.
``FlowGraphEstimator`` fits an information-flow graph from paired T0/T1
state arrays.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .flowgraph import build_flow_graph, emit_dot
from .fragmentation import (DEFAULT_MAX_ELEMENTS, EnumerationSpec, Threshold,
                            fragmentation, fragmentation_matrix)
from .infotheory import StateTable


def check_state_array(X, name: str = "X") -> np.ndarray:
    """Validate a 2-D array of non-negative integer symbols."""
    X = check_array(X, dtype=None, ensure_2d=True, input_name=name)
    if not np.issubdtype(X.dtype, np.integer):
        if np.issubdtype(X.dtype, np.bool_):
            X = X.astype(np.int64)
        elif not np.all(np.mod(X, 1) == 0):
            raise ValueError(f"{name} must hold integer symbols")
    X = X.astype(np.int64)
    if X.size and X.min() < 0:
        raise ValueError(f"{name} must hold non-negative symbols")
    return X


def check_paired(X, Y, x_name: str = "X", y_name: str = "y"):
    X = check_state_array(X, x_name)
    Y = np.asarray(Y)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    Y = check_state_array(Y, y_name)
    if X.shape[0] != Y.shape[0]:
        raise ValueError(
            f"{x_name} and {y_name} have different numbers of samples "
            f"({X.shape[0]} != {Y.shape[0]})")
    return X, Y


def _joint_table(X, Y, x_names, y_names) -> StateTable:
    rows = np.hstack([X, Y])
    return StateTable.from_array(rows, names=list(x_names) + list(y_names))


class FragmentationSelector(SelectorMixin, BaseEstimator):
    """Select the elements that minimally predict each target feature.

    Parameters
    ----------
    threshold : float
        Threshold value; a fraction of the recoverable information when
        ``threshold_mode="fraction"``, otherwise bits.
    threshold_mode : {"fraction", "bits"}
    sizes : tuple of int or None
        Partition sizes to materialize in ``matrix_``; sizes larger than
        the element count are dropped.  ``None`` enumerates the power set.
    include_full : bool
        Always include the all-element partition in ``matrix_``.
    normalize : bool
        Store cells as a fraction of each feature's total shared information.
    max_elements : int
        Largest element count for which a full power set is allowed.

    Attributes
    ----------
    matrix_ : FragmentationMatrix
    fragmentation_ : list of FragResult, one per target column
    support_ : ndarray of bool
    """

    def __init__(self, threshold=0.99, threshold_mode="fraction",
                 sizes=(1, 2, 3), include_full=True, normalize=True,
                 max_elements=DEFAULT_MAX_ELEMENTS):
        self.threshold = threshold
        self.threshold_mode = threshold_mode
        self.sizes = sizes
        self.include_full = include_full
        self.normalize = normalize
        self.max_elements = max_elements

    def fit(self, X, y):
        columns = getattr(X, "columns", None)
        X, Y = check_paired(X, y)
        self.n_features_in_ = X.shape[1]
        if columns is not None:
            self.feature_names_in_ = np.asarray(columns, dtype=object)
        x_names = [f"x{k}" for k in range(X.shape[1])]
        y_names = [f"y{k}" for k in range(Y.shape[1])]
        table = _joint_table(X, Y, x_names, y_names)
        elements = [(k,) for k in range(X.shape[1])]
        features = [(X.shape[1] + k,) for k in range(Y.shape[1])]
        thr = Threshold(self.threshold, self.threshold_mode)
        sizes = self.sizes
        if sizes is not None:
            sizes = tuple(s for s in sizes if s <= X.shape[1])
        spec = EnumerationSpec(sizes, self.include_full, self.max_elements)
        self.matrix_ = fragmentation_matrix(
            table, features, elements, spec, normalize=self.normalize,
            feature_names=y_names, element_names=x_names)
        self.fragmentation_ = [fragmentation(table, f, elements, thr)
                               for f in features]
        support = np.zeros(X.shape[1], dtype=bool)
        for res in self.fragmentation_:
            for w in res.witnesses:
                support[list(w)] = True
        self.support_ = support
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_")
        return self.support_


class FlowGraphEstimator(BaseEstimator):
    """Fit an information-flow graph from T0 and T1 state arrays.

    ``fit(T0, T1)`` takes arrays of shape (n_updates, |T0|) and
    (n_updates, |T1|).  Column names default to ``m0, m1, ...``; pass
    ``t0_names``/``t1_names`` (node ids such as ``i0``, ``m3``, ``o1``) to
    override.
    ``lifetimes`` (one id per row) is required when ``window`` is set.
    """

    def __init__(self, threshold=0.99, threshold_mode="fraction", window=None,
                 workers=1):
        self.threshold = threshold
        self.threshold_mode = threshold_mode
        self.window = window
        self.workers = workers

    def fit(self, T0, T1, t0_names=None, t1_names=None, lifetimes=None,
            connectome=None):
        T0, T1 = check_paired(T0, T1, "T0", "T1")
        if t0_names is None:
            t0_names = [f"m{k}" for k in range(T0.shape[1])]
        if t1_names is None:
            t1_names = [f"m{k}" for k in range(T1.shape[1])]
        t0_cols = [f"t0_{n}" for n in t0_names]
        t1_cols = [f"t1_{n}" for n in t1_names]
        names = t0_cols + t1_cols
        rows = [T0, T1]
        if lifetimes is not None:
            rows.append(np.asarray(lifetimes, dtype=np.int64).reshape(-1, 1))
            names.append("lifetime")
        table = StateTable.from_array(np.hstack(rows), names=names)
        self.graph_ = build_flow_graph(
            table, dict(zip(t1_names, t1_cols)), dict(zip(t0_names, t0_cols)),
            connectome=connectome,
            threshold=Threshold(self.threshold, self.threshold_mode),
            window=self.window, workers=self.workers)
        self.complexity_ = self.graph_.complexity
        self.n_features_in_ = T0.shape[1]
        return self

    def to_dot(self) -> str:
        check_is_fitted(self, "graph_")
        return emit_dot(self.graph_)
