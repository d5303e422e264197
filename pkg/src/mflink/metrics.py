"""Evaluation metrics over held-out cells.

RMSE-style metrics take the data matrix plus flat cell indices (the same
test_idx the splitter produced); the classification metrics take label and
score vectors already gathered at those cells. Both AUCs accept per-sample
weights, used to discount uncertain predictions. Tied scores are handled
by trapezoids in ROC (equal to weighted pairwise concordance with ties
counted half) and by score-blocks in the stepwise PR curve. Ill-posed
cases (empty index sets, single-class labels, zero variance, zero mean)
raise or return nan as documented per function rather than producing a
silently wrong number.
"""

import math
from dataclasses import dataclass, field, fields

import numpy as np


@dataclass
class EvalReport:
    rmse: float = math.nan
    rmse_non_abstained: float = math.nan
    fraction_abstained: float = math.nan
    roc_auc: float = math.nan
    pr_auc: float = math.nan
    uq_roc_auc: float = math.nan
    uq_pr_auc: float = math.nan
    pearson_uq_error: float = math.nan
    smr: float = math.nan
    nsmr: float = math.nan
    extras: dict = field(default_factory=dict)

    def metric_names(self):
        return [f.name for f in fields(self) if f.name != "extras"]


def aggregate_reports(reports):
    """Per-metric mean with a two-standard-deviation band across folds,
    ignoring undefined (nan) entries. Returns {name: (mean, 2*std, count)}."""
    if not reports:
        raise ValueError("aggregate_reports: no reports")
    out = {}
    for name in reports[0].metric_names():
        vals = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        if vals.size == 0:
            out[name] = (math.nan, math.nan, 0)
            continue
        mean = float(vals.mean())
        std = float(np.sqrt(np.mean((vals - mean) ** 2)))
        out[name] = (mean, 2.0 * std, int(vals.size))
    return out


def _flat(X, idx, name):
    arr = np.asarray(X, dtype=np.float64).ravel()
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("%s: empty index set" % name)
    return arr[idx], idx


def rmse(X, Xhat, idx):
    truth, idx = _flat(X, idx, "rmse")
    pred = np.asarray(Xhat, dtype=np.float64).ravel()[idx]
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


def rmse_non_abstained(X, Xhat, idx, abstain_set):
    """RMSE over the kept (non-abstained) test cells; nan when every test
    cell was abstained."""
    idx = np.asarray(idx, dtype=np.int64).ravel()
    abstain_set = np.asarray(abstain_set, dtype=np.int64).ravel()
    kept = np.setdiff1d(idx, abstain_set)
    if kept.size == 0:
        return math.nan
    return rmse(X, Xhat, kept)


def _classification_inputs(labels, scores, weights, name):
    y = np.asarray(labels, dtype=np.float64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape != s.shape or y.size == 0:
        raise ValueError("%s: labels and scores must be equal-length and "
                         "non-empty" % name)
    if not set(np.unique(y).tolist()) <= {0.0, 1.0}:
        raise ValueError("%s: labels must be 0/1" % name)
    if weights is None:
        w = np.ones_like(s)
    else:
        w = np.asarray(weights, dtype=np.float64).ravel()
        if w.shape != s.shape:
            raise ValueError("%s: weights must match labels" % name)
        if np.any(w < 0) or w.sum() == 0:
            raise ValueError("%s: weights must be nonnegative, not all zero"
                             % name)
    order = np.argsort(-s, kind="mergesort")
    return y[order], s[order], w[order]


def roc_auc(labels, scores, weights=None):
    """Weighted area under the ROC curve, trapezoidal over score-tie
    blocks. Requires both classes present."""
    y, s, w = _classification_inputs(labels, scores, weights, "roc_auc")
    pos_w = w * (y == 1.0)
    neg_w = w * (y == 0.0)
    total_pos = pos_w.sum()
    total_neg = neg_w.sum()
    if total_pos == 0 or total_neg == 0:
        raise ValueError("roc_auc: need both classes with positive weight")
    tp = fp = prev_tp = prev_fp = 0.0
    area = 0.0
    i = 0
    n = s.size
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        tp += pos_w[i:j].sum()
        fp += neg_w[i:j].sum()
        area += (fp - prev_fp) * (tp + prev_tp) / 2.0
        prev_tp, prev_fp = tp, fp
        i = j
    return float(area / (total_pos * total_neg))


def pr_auc(labels, scores, weights=None):
    """Weighted area under the precision-recall curve with step
    interpolation over score-tie blocks. Requires at least one positive."""
    y, s, w = _classification_inputs(labels, scores, weights, "pr_auc")
    pos_w = w * (y == 1.0)
    total_pos = pos_w.sum()
    if total_pos == 0:
        raise ValueError("pr_auc: need at least one positive with weight")
    tp = seen = 0.0
    area = 0.0
    i = 0
    n = s.size
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        tp += pos_w[i:j].sum()
        seen += w[i:j].sum()
        area += pos_w[i:j].sum() * (tp / seen)
        i = j
    return float(area / total_pos)


def pearson_uq_error(U, X, Xhat, test_idx):
    """Pearson correlation between per-cell uncertainty and absolute
    prediction error over the test cells; nan when either side has zero
    variance."""
    err, idx = _flat(np.abs(np.asarray(X, dtype=np.float64)
                            - np.asarray(Xhat, dtype=np.float64)),
                     test_idx, "pearson_uq_error")
    u = np.asarray(U, dtype=np.float64).ravel()[idx]
    du = u - u.mean()
    de = err - err.mean()
    su = float(np.sqrt(np.sum(du * du)))
    se = float(np.sqrt(np.sum(de * de)))
    if su == 0.0 or se == 0.0:
        return math.nan
    return float(np.sum(du * de) / (su * se))


def smr(U, test_idx):
    """Std-to-mean ratio (population std) of the uncertainties at the test
    cells; nan for a zero mean."""
    vals, _ = _flat(U, test_idx, "smr")
    mean = vals.mean()
    if mean == 0.0:
        return math.nan
    return float(np.sqrt(np.mean((vals - mean) ** 2)) / mean)


def nsmr(smr_values, r_values):
    """Rescale a sweep of SMR values elementwise by r / max(r)."""
    s = np.asarray(smr_values, dtype=np.float64).ravel()
    r = np.asarray(r_values, dtype=np.float64).ravel()
    if s.shape != r.shape or s.size == 0:
        raise ValueError("nsmr: need equal-length non-empty sweeps")
    top = r.max()
    if top <= 0.0:
        raise ValueError("nsmr: max correlation must be positive")
    return s * r / top
