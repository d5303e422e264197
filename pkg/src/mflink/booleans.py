"""Boolean factor thresholding and Boolean ensemble clustering.

Real-valued latent factors are turned Boolean per component: a threshold is
chosen for each column of W (row of H) and applied with the >= rule. Three
threshold selectors are provided: Otsu's between-class variance criterion,
exact 1-D two-means, and a coordinate-descent search that minimizes the
Boolean reconstruction error directly. Ensembles of Boolean factor matrices
are aligned with Hamming-distance matching and aggregated by majority vote.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import as_boolean_matrix, as_matrix, boolean_matmul

# Vectors longer than this are thresholded on a fixed histogram instead of
# the exact distinct-value scan; exactness at desk scale, bounded cost above.
_EXACT_SCAN_LIMIT = 4096
_HIST_BINS = 256


@dataclass
class ThresholdPair:
    """Per-component thresholds for W columns and H rows."""

    w_thresholds: np.ndarray
    h_thresholds: np.ndarray


def write_thresholds_csv(path, pair):
    with open(path, "w") as fh:
        fh.write("component,w_threshold,h_threshold\n")
        for i, (tw, th) in enumerate(zip(pair.w_thresholds, pair.h_thresholds)):
            fh.write("%d,%s,%s\n" % (i, repr(float(tw)), repr(float(th))))


def _candidates(v):
    vals = np.unique(v)
    if vals.size <= _EXACT_SCAN_LIMIT:
        return vals
    lo, hi = float(vals[0]), float(vals[-1])
    edges = np.linspace(lo, hi, _HIST_BINS + 1)[1:-1]
    # snap each edge to the smallest data value at or above it so thresholds
    # stay inside the value range and the >= rule splits on real values
    snapped = vals[np.searchsorted(vals, edges, side="left").clip(max=vals.size - 1)]
    return np.unique(np.concatenate(([lo], snapped, [hi])))


def otsu_threshold(v):
    """Threshold maximizing the between-class variance pi0*pi1*(mu0-mu1)^2.

    Candidates are the distinct values of v; the class split is
    {x < t} versus {x >= t}. The first maximizer in ascending candidate
    order wins.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("empty vector")
    cand = _candidates(v)
    if cand.size == 1:
        warnings.warn("otsu_threshold: constant vector, degenerate threshold",
                      stacklevel=2)
        return float(cand[0])
    x = np.sort(v)
    csum = np.concatenate(([0.0], np.cumsum(x)))
    n = x.size
    total = csum[-1]
    # class 0 holds the c smallest values where c = #(x < t)
    counts = np.searchsorted(x, cand, side="left")
    pi0 = counts / n
    pi1 = 1.0 - pi0
    sum0 = csum[counts]
    with np.errstate(invalid="ignore", divide="ignore"):
        mu0 = np.where(counts > 0, sum0 / np.maximum(counts, 1), 0.0)
        mu1 = np.where(counts < n, (total - sum0) / np.maximum(n - counts, 1), 0.0)
    score = pi0 * pi1 * (mu0 - mu1) ** 2
    return float(cand[int(np.argmax(score))])


def kmeans_threshold(v):
    """Midpoint of the two exact 1-D k-means centers.

    In one dimension the optimal two-cluster split is a cut in sorted order,
    so the scan over split points is exact; no Lloyd iterations.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("empty vector")
    x = np.sort(v)
    if x[0] == x[-1]:
        warnings.warn("kmeans_threshold: constant vector, degenerate threshold",
                      stacklevel=2)
        return float(x[0])
    n = x.size
    csum = np.concatenate(([0.0], np.cumsum(x)))
    csq = np.concatenate(([0.0], np.cumsum(x * x)))
    s = np.arange(1, n)
    sum0, sum1 = csum[s], csum[-1] - csum[s]
    sq0, sq1 = csq[s], csq[-1] - csq[s]
    sse = (sq0 - sum0 ** 2 / s) + (sq1 - sum1 ** 2 / (n - s))
    best = int(np.argmin(sse))
    c0 = sum0[best] / s[best]
    c1 = sum1[best] / (n - s[best])
    return float((c0 + c1) / 2.0)


def _threshold_fn(method):
    if method == "otsu":
        return otsu_threshold
    if method == "kmeans":
        return kmeans_threshold
    raise ValueError("unknown threshold method %r" % (method,))


def _apply_pair(W, H, pair):
    Wb = (W >= pair.w_thresholds[None, :]).astype(np.float64)
    Hb = (H >= pair.h_thresholds[:, None]).astype(np.float64)
    return Wb, Hb


def _per_component_pair(W, H, method):
    fn = _threshold_fn(method)
    tw = np.array([fn(W[:, j]) for j in range(W.shape[1])])
    th = np.array([fn(H[j, :]) for j in range(H.shape[0])])
    return ThresholdPair(tw, th)


def _boolean_error(X, Wb, Hb):
    diff = X - boolean_matmul(Wb, Hb)
    return float(np.sum(diff * diff))


def search_thresholds(X, W, H, max_sweeps=50):
    """Coordinate descent on per-component thresholds minimizing the Boolean
    reconstruction error ||X - binarized(W) x binarized(H)||_F^2.

    Warm-started from the better of the Otsu and two-means binarizations;
    each single-threshold move picks the error-minimizing candidate among
    the component's distinct values, so the error never increases.
    """
    X = as_boolean_matrix(X)
    W = as_matrix(W, "W")
    H = as_matrix(H, "H")
    if W.shape[0] != X.shape[0] or H.shape[1] != X.shape[1] or W.shape[1] != H.shape[0]:
        raise ValueError("nonconforming shapes")
    k = W.shape[1]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        starts = [_per_component_pair(W, H, m) for m in ("otsu", "kmeans")]
    errs = [_boolean_error(X, *_apply_pair(W, H, p)) for p in starts]
    pair = starts[int(np.argmin(errs))]
    tw = pair.w_thresholds.copy()
    th = pair.h_thresholds.copy()
    Wb, Hb = _apply_pair(W, H, ThresholdPair(tw, th))
    # cover counts: how many components switch each entry on
    cover = Wb @ Hb
    for _ in range(max_sweeps):
        tw_prev, th_prev = tw.copy(), th.copy()
        for j in range(k):
            rest = (cover - np.outer(Wb[:, j], Hb[j, :])) >= 1.0
            # per-row cost when the component is off / on at that row
            cost_off = np.abs(X - rest).sum(axis=1)
            cost_on = np.abs(X - np.maximum(rest, Hb[j, :][None, :])).sum(axis=1)
            cand = np.unique(W[:, j])
            # rows with value >= t are on; prefix sums over ascending values
            order = np.argsort(W[:, j], kind="stable")
            off_sorted = cost_off[order]
            on_sorted = cost_on[order]
            boundary = np.searchsorted(W[:, j][order], cand, side="left")
            pre_off = np.concatenate(([0.0], np.cumsum(off_sorted)))
            total_on = float(on_sorted.sum())
            pre_on = np.concatenate(([0.0], np.cumsum(on_sorted)))
            err = pre_off[boundary] + (total_on - pre_on[boundary])
            tw[j] = float(cand[int(np.argmin(err))])
            new_col = (W[:, j] >= tw[j]).astype(np.float64)
            cover += np.outer(new_col - Wb[:, j], Hb[j, :])
            Wb[:, j] = new_col
        for j in range(k):
            rest = (cover - np.outer(Wb[:, j], Hb[j, :])) >= 1.0
            cost_off = np.abs(X - rest).sum(axis=0)
            cost_on = np.abs(X - np.maximum(rest, Wb[:, j][:, None])).sum(axis=0)
            cand = np.unique(H[j, :])
            order = np.argsort(H[j, :], kind="stable")
            off_sorted = cost_off[order]
            on_sorted = cost_on[order]
            boundary = np.searchsorted(H[j, :][order], cand, side="left")
            pre_off = np.concatenate(([0.0], np.cumsum(off_sorted)))
            total_on = float(on_sorted.sum())
            pre_on = np.concatenate(([0.0], np.cumsum(on_sorted)))
            err = pre_off[boundary] + (total_on - pre_on[boundary])
            th[j] = float(cand[int(np.argmin(err))])
            new_row = (H[j, :] >= th[j]).astype(np.float64)
            cover += np.outer(Wb[:, j], new_row - Hb[j, :])
            Hb[j, :] = new_row
        if np.array_equal(tw, tw_prev) and np.array_equal(th, th_prev):
            break
    return ThresholdPair(tw, th)


def binarize_factors(W, H, method, X=None, max_sweeps=50):
    """Binarize factors per component with the chosen threshold selector.

    Returns (W_bool, H_bool, thresholds). The search method needs the
    target matrix X to score candidate thresholds.
    """
    W = as_matrix(W, "W")
    H = as_matrix(H, "H")
    if method == "search":
        if X is None:
            raise ValueError("method 'search' requires the target matrix X")
        pair = search_thresholds(X, W, H, max_sweeps=max_sweeps)
    else:
        pair = _per_component_pair(W, H, method)
    Wb, Hb = _apply_pair(W, H, pair)
    if np.any(Wb.sum(axis=0) == 0) or np.any(Hb.sum(axis=1) == 0):
        warnings.warn("binarize_factors: all-zero component after thresholding",
                      stacklevel=2)
    return Wb, Hb, pair


@dataclass
class BooleanClusterResult:
    centroids: np.ndarray
    orderings: list
    converged: bool
    iterations: int


def _hamming_cost(cols, cents):
    # cols, cents: n x k Boolean; cost[a, b] = Hamming(cols[:, a], cents[:, b])
    ones = cols.T @ cents
    a = cols.sum(axis=0)[:, None]
    b = cents.sum(axis=0)[None, :]
    return a + b - 2.0 * ones


def boolean_cluster(W_all, max_iters=100):
    """Align a stack of Boolean factor matrices column-wise by Hamming
    distance and aggregate them into Boolean centroids.

    Each solution contributes exactly one column to each cluster (optimal
    bipartite matching per solution); centroids are entrywise majority votes
    with ties resolved to 1. Iterates until the column orderings stabilize.
    """
    stack = np.asarray(W_all, dtype=np.float64)
    if stack.ndim != 3:
        raise ValueError("expected a stack of P matrices of equal shape")
    P, n, k = stack.shape
    if P < 1:
        raise ValueError("need at least one solution")
    for p in range(P):
        as_boolean_matrix(stack[p])
    cents = stack[0].copy()
    orderings = [np.arange(k) for _ in range(P)]
    converged = False
    iterations = 0
    for it in range(1, max_iters + 1):
        iterations = it
        new_orderings = []
        for p in range(P):
            cost = _hamming_cost(stack[p], cents)
            rows, cols = linear_sum_assignment(cost)
            # ordering[b] = index of the solution column assigned to cluster b
            perm = np.empty(k, dtype=np.int64)
            perm[cols] = rows
            new_orderings.append(perm)
        aligned = np.stack([stack[p][:, new_orderings[p]] for p in range(P)])
        votes = aligned.sum(axis=0)
        cents = (votes * 2.0 >= P).astype(np.float64)
        if all(np.array_equal(a, b) for a, b in zip(orderings, new_orderings)):
            orderings = new_orderings
            converged = True
            break
        orderings = new_orderings
    return BooleanClusterResult(cents, orderings, converged, iterations)


def align_boolean_stack(W_all, result):
    stack = np.asarray(W_all, dtype=np.float64)
    return np.stack([stack[p][:, result.orderings[p]] for p in range(stack.shape[0])])
