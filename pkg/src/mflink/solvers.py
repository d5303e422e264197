"""Single-rank factorization engines.

Five solvers share one FactorModel container:

- nmf_mu: multiplicative updates on the full matrix.
- wnmf: masked HALS; unobserved entries exert no pull, factors carry an
  L2 penalty. Each column update is an exact coordinate minimizer, so the
  masked regularized objective never increases.
- rnmf: masked multiplicative updates plus additively trained row/column
  biases around the global mean of the observed entries.
- bnmf: multiplicative updates on a Boolean target. The iteration state
  stays real-valued; every sweep a Boolean snapshot is taken with the
  selected per-component thresholder and the best snapshot by Boolean
  reconstruction error is returned. The expensive search thresholder runs
  once on the converged factors instead of every sweep.
- lmf: logistic factorization with row/column biases, trained by plain
  gradient descent on the mean negative log-likelihood of the observed
  cells.

All solvers are deterministic given (inputs, options, seed) and keep their
factor constraints (non-negativity, Booleanness) at every iteration.
"""

import json
import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import matio
from .booleans import ThresholdPair, binarize_factors, search_thresholds
from .core import RandomSource, as_boolean_matrix, as_mask, as_matrix, boolean_matmul

_TINY = 1e-12
_CLIP = 1e-15


class DivergenceError(RuntimeError):
    """Raised when a gradient-descent solver's objective keeps rising.

    Carries the objective trace up to the point of failure.
    """

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = list(trace)


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 1000
    tol: float = 1e-6
    factor_penalty: float = 0.01      # L2 weight on W and H (wnmf, lmf)
    w_update_penalty: float = 0.01    # denominator damping for W updates
    h_update_penalty: float = 0.01    # denominator damping for H updates
    row_bias_penalty: float = 0.01
    col_bias_penalty: float = 0.01
    learn_rate: float = 0.005         # lmf gradient step
    row_bias_rate: float = 0.005      # rnmf bias steps
    col_bias_rate: float = 0.005
    seed: RandomSource = field(default_factory=lambda: RandomSource(0))

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        for name in ("factor_penalty", "w_update_penalty", "h_update_penalty",
                     "row_bias_penalty", "col_bias_penalty"):
            if getattr(self, name) < 0:
                raise ValueError("%s must be >= 0" % name)
        for name in ("learn_rate", "row_bias_rate", "col_bias_rate"):
            if getattr(self, name) <= 0:
                raise ValueError("%s must be > 0" % name)

    def with_seed(self, seed):
        return replace(self, seed=seed)


@dataclass
class FactorModel:
    W: np.ndarray
    H: np.ndarray
    kind: str
    row_bias: np.ndarray = None
    col_bias: np.ndarray = None
    global_offset: float = None
    objective: float = None
    objective_trace: list = None
    thresholds: ThresholdPair = None
    iterations: int = 0

    @property
    def rank(self):
        return self.W.shape[1]

    def predict(self, boolean_product=False):
        """Prediction matrix per model kind.

        nmf/wnmf/bnmf: WH (or the Boolean OR-product on request for Boolean
        factors); rnmf: WH + row_bias + col_bias + global_offset;
        lmf: sigmoid(WH + row_bias + col_bias).
        """
        if self.kind in ("nmf", "wnmf", "bnmf"):
            if boolean_product:
                return boolean_matmul(self.W, self.H)
            return self.W @ self.H
        if self.kind == "rnmf":
            return (self.W @ self.H + self.row_bias[:, None]
                    + self.col_bias[None, :] + self.global_offset)
        if self.kind == "lmf":
            return sigmoid(self.W @ self.H + self.row_bias[:, None]
                           + self.col_bias[None, :])
        raise ValueError("unknown model kind %r" % (self.kind,))

    def validate(self):
        if self.kind in ("nmf", "wnmf", "rnmf"):
            if np.any(self.W < 0) or np.any(self.H < 0):
                raise ValueError("%s factors must be non-negative" % self.kind)
        if self.kind in ("rnmf", "lmf"):
            if self.row_bias is None or self.col_bias is None:
                raise ValueError("%s model requires biases" % self.kind)
        if self.kind == "rnmf" and self.global_offset is None:
            raise ValueError("rnmf model requires a global offset")
        return self


def predict(model, boolean_product=False):
    return model.predict(boolean_product=boolean_product)


def sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # keep predictions strictly inside (0, 1)
    return np.clip(out, _CLIP, 1.0 - _CLIP)


def _init_factors(n, m, k, mean_x, rng):
    gen = rng.generator()
    scale = np.sqrt(max(mean_x, _TINY) / k)
    W = gen.random((n, k)) * scale
    H = gen.random((k, m)) * scale
    return W, H


def _converged(prev, cur, tol):
    return prev is not None and abs(prev - cur) <= tol * max(abs(prev), _TINY)


def nmf_mu(X, k, opts=None):
    """Multiplicative-update NMF minimizing ||X - WH||_F^2."""
    opts = opts or SolverOptions()
    X = as_matrix(X)
    if np.any(X < 0):
        raise ValueError("nmf_mu requires a non-negative matrix")
    n, m = X.shape
    if not (1 <= k <= min(n, m)):
        raise ValueError("rank k=%d out of range for %dx%d" % (k, n, m))
    W, H = _init_factors(n, m, k, float(X.mean()), opts.seed)
    trace = []
    prev = None
    it = 0
    for it in range(1, opts.max_iters + 1):
        W *= (X @ H.T) / (W @ (H @ H.T) + _TINY)
        H *= (W.T @ X) / ((W.T @ W) @ H + _TINY)
        diff = X - W @ H
        obj = float(np.sum(diff * diff))
        trace.append(obj)
        if _converged(prev, obj, opts.tol):
            break
        prev = obj
    return FactorModel(W, H, "nmf", objective=trace[-1], objective_trace=trace,
                       iterations=it).validate()


def _masked_objective(Rm, W, H, penalty):
    return float(np.sum(Rm * Rm) + penalty * (np.sum(W * W) + np.sum(H * H)))


def wnmf(X, M, k, opts=None):
    """Masked HALS for min ||M . (X - WH)||_F^2 + penalty(||W||^2 + ||H||^2)."""
    opts = opts or SolverOptions()
    X = as_matrix(X)
    if np.any(X < 0):
        raise ValueError("wnmf requires a non-negative matrix")
    n, m = X.shape
    M = as_mask(M, (n, m))
    if not np.any(M > 0):
        raise ValueError("mask observes nothing")
    if not (1 <= k <= min(n, m)):
        raise ValueError("rank k=%d out of range for %dx%d" % (k, n, m))
    lam = opts.factor_penalty
    Xm = X * M
    mean_obs = float(Xm.sum() / M.sum())
    W, H = _init_factors(n, m, k, mean_obs, opts.seed)
    trace = []
    prev = None
    it = 0
    for it in range(1, opts.max_iters + 1):
        Rm = Xm - M * (W @ H)
        obj = _masked_objective(Rm, W, H, lam)
        trace.append(obj)
        if _converged(prev, obj, opts.tol):
            break
        prev = obj
        for j in range(k):
            h = H[j, :]
            d = M @ (h * h)
            num = Rm @ h + W[:, j] * d
            w_new = np.maximum(num, 0.0) / np.maximum(d + lam, _TINY)
            Rm -= M * np.outer(w_new - W[:, j], h)
            W[:, j] = w_new
        for j in range(k):
            w = W[:, j]
            d = (w * w) @ M
            num = Rm.T @ w + H[j, :] * d
            h_new = np.maximum(num, 0.0) / np.maximum(d + lam, _TINY)
            Rm -= M * np.outer(w, h_new - H[j, :])
            H[j, :] = h_new
    Rm = Xm - M * (W @ H)
    final = _masked_objective(Rm, W, H, lam)
    if not trace or final < trace[-1]:
        trace.append(final)
    return FactorModel(W, H, "wnmf", objective=trace[-1], objective_trace=trace,
                       iterations=it).validate()


def rnmf(X, M, k, opts=None, fit_biases=True):
    """Masked NMF with row/column biases around the observed global mean.

    Prediction is WH + row_bias + col_bias + offset. Biases follow additive
    gradient steps; factors follow multiplicative updates restricted to the
    observed entries. Bias steps are stable while
    row_bias_rate * n_cols * (1 + row_bias_penalty) < 2 (and symmetrically
    for columns); the defaults hold for every shipped experiment shape.
    """
    opts = opts or SolverOptions()
    X = as_matrix(X)
    if np.any(X < 0):
        raise ValueError("rnmf requires a non-negative matrix")
    n, m = X.shape
    M = as_mask(M, (n, m))
    n_obs = float(M.sum())
    if n_obs == 0:
        raise ValueError("mask observes nothing")
    if not (1 <= k <= min(n, m)):
        raise ValueError("rank k=%d out of range for %dx%d" % (k, n, m))
    Xm = X * M
    mu = float(Xm.sum() / n_obs) if fit_biases else 0.0
    W, H = _init_factors(n, m, k, max(float(Xm.sum() / n_obs), _TINY), opts.seed)
    b_row = np.zeros(n)
    b_col = np.zeros(m)
    a, b = opts.w_update_penalty, opts.h_update_penalty
    g_row, g_col = opts.row_bias_penalty, opts.col_bias_penalty
    trace = []
    prev = None
    it = 0
    for it in range(1, opts.max_iters + 1):
        pred = W @ H + b_row[:, None] + b_col[None, :] + mu
        err = M * (X - pred)
        if fit_biases:
            b_row = b_row + opts.row_bias_rate * (err.sum(axis=1) - m * g_row * b_row)
            b_col = b_col + opts.col_bias_rate * (err.sum(axis=0) - n * g_col * b_col)
            pred = W @ H + b_row[:, None] + b_col[None, :] + mu
        pred_m = M * pred
        W *= (Xm @ H.T) / np.maximum(pred_m @ H.T + a * W, _TINY)
        pred_m = M * (W @ H + b_row[:, None] + b_col[None, :] + mu)
        H *= (W.T @ Xm) / np.maximum(W.T @ pred_m + b * H, _TINY)
        resid = M * (X - (W @ H + b_row[:, None] + b_col[None, :] + mu))
        obj = float(np.sum(resid * resid)
                    + a * np.sum(W * W) + b * np.sum(H * H)
                    + g_row * np.sum(b_row * b_row) + g_col * np.sum(b_col * b_col))
        trace.append(obj)
        if _converged(prev, obj, opts.tol):
            break
        prev = obj
    return FactorModel(W, H, "rnmf", row_bias=b_row, col_bias=b_col,
                       global_offset=mu, objective=trace[-1],
                       objective_trace=trace, iterations=it).validate()


def bnmf(X, k, thresholder="otsu", opts=None):
    """Boolean-target NMF via multiplicative updates with adaptive
    per-component thresholding.

    thresholder 'otsu'/'kmeans': every sweep the real factors are
    binarized and the best Boolean snapshot by reconstruction error is kept.
    'search': the coordinate-descent threshold search runs once on the
    converged real factors. 'uniform': no thresholding, the real factors
    are returned.
    """
    opts = opts or SolverOptions()
    X = as_boolean_matrix(X)
    n, m = X.shape
    if not (1 <= k <= min(n, m)):
        raise ValueError("rank k=%d out of range for %dx%d" % (k, n, m))
    if thresholder not in ("otsu", "kmeans", "search", "uniform"):
        raise ValueError("unknown thresholder %r" % (thresholder,))
    a, b = opts.w_update_penalty, opts.h_update_penalty
    W, H = _init_factors(n, m, k, float(X.mean()), opts.seed)
    snap_method = "kmeans" if thresholder == "kmeans" else "otsu"
    best = None
    trace = []
    prev = None
    it = 0
    for it in range(1, opts.max_iters + 1):
        W *= (X @ H.T) / (W @ (H @ H.T) + a + _TINY)
        H *= (W.T @ X) / ((W.T @ W) @ H + b + _TINY)
        diff = X - W @ H
        obj = float(np.sum(diff * diff))
        trace.append(obj)
        if thresholder in ("otsu", "kmeans"):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                Wb, Hb, pair = binarize_factors(W, H, snap_method)
            bdiff = X - boolean_matmul(Wb, Hb)
            bobj = float(np.sum(bdiff * bdiff))
            if best is None or bobj < best[0]:
                best = (bobj, Wb, Hb, pair)
        if _converged(prev, obj, opts.tol):
            break
        prev = obj
    if thresholder == "uniform":
        return FactorModel(W, H, "bnmf", objective=trace[-1],
                           objective_trace=trace, iterations=it)
    if thresholder == "search":
        pair = search_thresholds(X, W, H)
        Wb = (W >= pair.w_thresholds[None, :]).astype(np.float64)
        Hb = (H >= pair.h_thresholds[:, None]).astype(np.float64)
        bdiff = X - boolean_matmul(Wb, Hb)
        best = (float(np.sum(bdiff * bdiff)), Wb, Hb, pair)
    bobj, Wb, Hb, pair = best
    return FactorModel(Wb, Hb, "bnmf", objective=bobj, objective_trace=trace,
                       thresholds=pair, iterations=it)


def lmf_loss_grads(X, M, W, H, b_row, b_col, penalty):
    """Mean observed negative log-likelihood of the logistic model plus an
    L2 penalty, with analytic gradients for every parameter block.

    Normalizing by the observed-cell count keeps the gradient scale (and so
    the usable learning rate) independent of the matrix size.
    """
    n_obs = float(M.sum())
    P = sigmoid(W @ H + b_row[:, None] + b_col[None, :])
    nll = -(X * np.log(P) + (1.0 - X) * np.log(1.0 - P))
    reg = 0.5 * penalty * (np.sum(W * W) + np.sum(H * H)
                           + np.sum(b_row * b_row) + np.sum(b_col * b_col))
    loss = (float(np.sum(M * nll)) + reg) / n_obs
    G = M * (P - X)
    dW = (G @ H.T + penalty * W) / n_obs
    dH = (W.T @ G + penalty * H) / n_obs
    db_row = (G.sum(axis=1) + penalty * b_row) / n_obs
    db_col = (G.sum(axis=0) + penalty * b_col) / n_obs
    return loss, dW, dH, db_row, db_col


def lmf(X, M, k, opts=None):
    """Logistic matrix factorization with row/column biases.

    Plain gradient descent with a fixed learning rate; raises
    DivergenceError (with the objective trace) after 20 consecutive
    objective increases.
    """
    opts = opts or SolverOptions()
    X = as_boolean_matrix(X)
    n, m = X.shape
    M = as_mask(M, (n, m))
    n_obs = float(M.sum())
    if n_obs == 0:
        raise ValueError("mask observes nothing")
    if not (1 <= k <= min(n, m)):
        raise ValueError("rank k=%d out of range for %dx%d" % (k, n, m))
    mean_obs = float((X * M).sum() / n_obs)
    W, H = _init_factors(n, m, k, max(mean_obs, _TINY), opts.seed)
    b_row = np.zeros(n)
    b_col = np.zeros(m)
    eta = opts.learn_rate
    trace = []
    prev = None
    rises = 0
    it = 0
    for it in range(1, opts.max_iters + 1):
        loss, dW, dH, db_row, db_col = lmf_loss_grads(
            X, M, W, H, b_row, b_col, opts.factor_penalty)
        trace.append(loss)
        if prev is not None and loss > prev:
            rises += 1
            if rises >= 20:
                raise DivergenceError(
                    "lmf objective rose for 20 consecutive iterations", trace)
        else:
            rises = 0
        if _converged(prev, loss, opts.tol):
            break
        prev = loss
        W = W - eta * dW
        H = H - eta * dH
        b_row = b_row - eta * db_row
        b_col = b_col - eta * db_col
    return FactorModel(W, H, "lmf", row_bias=b_row, col_bias=b_col,
                       objective=trace[-1], objective_trace=trace,
                       iterations=it).validate()


def save_model(model, dirpath):
    """Serialize a FactorModel to a directory: W.csv, H.csv, optional
    biases.csv, and metadata.json."""
    os.makedirs(dirpath, exist_ok=True)
    matio.write_dense_csv(os.path.join(dirpath, "W.csv"), model.W)
    matio.write_dense_csv(os.path.join(dirpath, "H.csv"), model.H)
    if model.row_bias is not None:
        with open(os.path.join(dirpath, "biases.csv"), "w") as fh:
            fh.write("axis,index,value\n")
            for i, v in enumerate(model.row_bias):
                fh.write("row,%d,%s\n" % (i, repr(float(v))))
            for j, v in enumerate(model.col_bias):
                fh.write("col,%d,%s\n" % (j, repr(float(v))))
    meta = {
        "kind": model.kind,
        "rank": int(model.rank),
        "global_offset": model.global_offset,
        "objective": model.objective,
        "iterations": int(model.iterations),
    }
    if model.thresholds is not None:
        meta["w_thresholds"] = [float(t) for t in model.thresholds.w_thresholds]
        meta["h_thresholds"] = [float(t) for t in model.thresholds.h_thresholds]
    with open(os.path.join(dirpath, "metadata.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(dirpath):
    W = matio.read_dense_csv(os.path.join(dirpath, "W.csv"))
    H = matio.read_dense_csv(os.path.join(dirpath, "H.csv"))
    with open(os.path.join(dirpath, "metadata.json")) as fh:
        meta = json.load(fh)
    row_bias = col_bias = None
    bias_path = os.path.join(dirpath, "biases.csv")
    if os.path.exists(bias_path):
        rows, cols = {}, {}
        with open(bias_path) as fh:
            next(fh)
            for line in fh:
                axis, idx, val = line.strip().split(",")
                (rows if axis == "row" else cols)[int(idx)] = float(val)
        row_bias = np.array([rows[i] for i in range(len(rows))])
        col_bias = np.array([cols[j] for j in range(len(cols))])
    thresholds = None
    if "w_thresholds" in meta:
        thresholds = ThresholdPair(np.array(meta["w_thresholds"]),
                                   np.array(meta["h_thresholds"]))
    return FactorModel(W, H, meta["kind"], row_bias=row_bias, col_bias=col_bias,
                       global_offset=meta.get("global_offset"),
                       objective=meta.get("objective"), thresholds=thresholds,
                       iterations=meta.get("iterations", 0))
