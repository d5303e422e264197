"""Uncertainty quantification over a perturbation ensemble.

Per-entry uncertainty is the population standard deviation of the P
reconstructions. The abstention threshold is the mean uncertainty over the
training cells; a test cell is abstained when its uncertainty strictly
exceeds that threshold. UQ weights shrink the influence of uncertain test
cells in weighted classification metrics. The ensemble combiner bolts the
row/column biases of a logistic factorization onto a base model's
reconstruction through a sigmoid.
"""

from dataclasses import dataclass

import numpy as np

from .core import is_boolean
from .solvers import lmf, sigmoid


@dataclass
class UncertaintyMatrix:
    values: np.ndarray            # per-entry standard deviation, >= 0
    mean_prediction: np.ndarray
    num_perturbations: int


@dataclass
class AbstentionDecision:
    threshold: float
    abstain_idx: np.ndarray       # flat indices into the matrix, subset of test
    fraction_abstained: float


def _values(U):
    return U.values if isinstance(U, UncertaintyMatrix) else np.asarray(U, float)


def uncertainty_matrix(reconstructions):
    """Entrywise ensemble mean and population standard deviation (1/P)."""
    stack = np.asarray(reconstructions, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[0] < 2:
        raise ValueError("need a stack of at least 2 reconstructions")
    mean = stack.mean(axis=0)
    std = np.sqrt(np.mean((stack - mean[None, :, :]) ** 2, axis=0))
    return UncertaintyMatrix(std, mean, int(stack.shape[0]))


def abstention_threshold(U, train_idx):
    """Mean uncertainty over the training cells."""
    vals = _values(U)
    train_idx = np.asarray(train_idx, dtype=np.int64).ravel()
    if train_idx.size == 0:
        raise ValueError("empty training index set")
    return float(vals.ravel()[train_idx].mean())


def abstain(U, tau, test_idx):
    """Abstain at test cells whose uncertainty strictly exceeds tau."""
    vals = _values(U).ravel()
    test_idx = np.asarray(test_idx, dtype=np.int64).ravel()
    mask = vals[test_idx] > tau
    abstained = test_idx[mask]
    frac = float(abstained.size / test_idx.size) if test_idx.size else 0.0
    return AbstentionDecision(float(tau), abstained, frac)


def uq_weights(U, train_idx, test_idx):
    """Per-test-cell weights 1 / (1 + U_ij / (1 + median train uncertainty)).

    Certain cells (U = 0) get weight exactly 1; weights decay toward 0 as
    uncertainty grows relative to the training level.
    """
    vals = _values(U).ravel()
    train_idx = np.asarray(train_idx, dtype=np.int64).ravel()
    test_idx = np.asarray(test_idx, dtype=np.int64).ravel()
    if train_idx.size == 0:
        raise ValueError("empty training index set")
    med = float(np.median(vals[train_idx]))
    w = vals[test_idx] / (1.0 + med)
    return 1.0 / (1.0 + w)


def combine_with_biases(base_prediction, row_bias, col_bias):
    """sigmoid(base + row_bias + col_bias), broadcast over rows/columns."""
    base_prediction = np.asarray(base_prediction, dtype=np.float64)
    return sigmoid(base_prediction + np.asarray(row_bias)[:, None]
                   + np.asarray(col_bias)[None, :])


def lmf_ensemble_predict(X, M, base_model, k_opt, opts=None):
    """Train a logistic factorization at rank k_opt and return
    sigmoid(base reconstruction + its row/column biases).

    Only the logistic model's biases are kept; its own WH term is discarded.
    """
    if base_model.rank != k_opt:
        raise ValueError("base model has rank %d, expected k_opt=%d"
                         % (base_model.rank, k_opt))
    model = lmf(X, M, k_opt, opts)
    use_boolean = (base_model.kind == "bnmf"
                   and is_boolean(base_model.W) and is_boolean(base_model.H))
    base = base_model.predict(boolean_product=use_boolean)
    return combine_with_biases(base, model.row_bias, model.col_bias)
