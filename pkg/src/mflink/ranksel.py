"""Automatic rank selection by perturbation-ensemble stability.

For each candidate rank the data is perturbed P times, a factorization is
fit to each copy, and the P sets of basis columns are clustered into k
groups (one column per run and group). Tight clusters (high minimum
silhouette) mean the rank is stable under perturbation; the selected rank
is the largest one whose minimum silhouette clears a threshold. Column-wise
relative errors at adjacent ranks are compared with a rank-sum test as a
diagnostic only.

Random streams: perturbation q at rank k draws from stream k*1000+q of the
ensemble seed, solver initialization from stream 5_000_000+k*1000+q, so any
cell of the scan grid can be reproduced in isolation.
"""

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .booleans import align_boolean_stack, boolean_cluster, binarize_factors
from .core import (RandomSource, as_mask, as_matrix, nnls_regress,
                   perturb_boolean, perturb_uniform)
from .solvers import FactorModel, SolverOptions, bnmf, nmf_mu, rnmf, wnmf
from .uq import uncertainty_matrix

_SOLVER_STREAM = 5_000_000
_SOLVERS = ("nmf", "wnmf", "rnmf", "bnmf")
_TINY = 1e-12


@dataclass(frozen=True)
class EnsembleSpec:
    """Configuration of a perturbation ensemble.

    boolean_mode switches the perturbation to exact-count 0/1 flips; it is
    required for the bnmf solver (whose input must stay Boolean) and allowed
    for real-valued solvers on Boolean data. Clustering is Boolean exactly
    when the fitted basis factors are Boolean, i.e. for bnmf with a real
    thresholder; bnmf with thresholder "uniform" keeps real factors and is
    clustered like the real-valued solvers.
    """
    solver: str = "nmf"
    num_perturbations: int = 10
    epsilon: float = 0.015          # uniform mode: relative scale noise
    eps_pos: float = 0.015          # boolean mode: fraction of zeros flipped on
    eps_neg: float = 0.015          # boolean mode: fraction of ones flipped off
    boolean_mode: bool = False
    thresholder: str = "otsu"       # bnmf only: otsu | kmeans | search | uniform
    seed: int = 0
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.solver not in _SOLVERS:
            raise ValueError("unknown solver %r" % (self.solver,))
        if self.num_perturbations < 2:
            raise ValueError("need at least 2 perturbations")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if not (0.0 <= self.eps_pos < 1.0 and 0.0 <= self.eps_neg < 1.0):
            raise ValueError("flip rates must lie in [0, 1)")
        if self.thresholder not in ("otsu", "kmeans", "search", "uniform"):
            raise ValueError("unknown thresholder %r" % (self.thresholder,))
        if self.solver == "bnmf" and not self.boolean_mode:
            raise ValueError("bnmf requires boolean_mode perturbations")


@dataclass
class RankRecord:
    k: int
    valid: bool
    failures: int
    silhouettes: np.ndarray = None
    min_silhouette: float = math.nan
    mean_silhouette: float = math.nan
    relative_error: float = math.nan
    column_errors: np.ndarray = None
    model: FactorModel = None          # robust W with regressed H
    prediction: np.ndarray = None
    uncertainty: object = None         # UncertaintyMatrix over the ensemble
    failure_messages: list = field(default_factory=list)


@dataclass
class RankScanResult:
    k_values: list
    records: dict                       # k -> RankRecord
    pvalues_adjacent: list              # (k_lo, k_hi, p) for consecutive valid ks
    k_opt: int = None
    low_confidence: bool = False
    sil_threshold: float = None
    pvalues_vs_selected: dict = field(default_factory=dict)

    def valid_ks(self):
        return [k for k in self.k_values if self.records[k].valid]


def wilcoxon_ranksum(a, b):
    """Two-sided rank-sum test p-value, normal approximation with tie
    correction and continuity correction. All-tied pools give p = 1."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    n1, n2 = a.size, b.size
    pooled = np.concatenate([a, b])
    total = n1 + n2
    order = np.argsort(pooled, kind="mergesort")
    sorted_v = pooled[order]
    ranks = np.empty(total)
    tie_term = 0.0
    i = 0
    while i < total:
        j = i
        while j < total and sorted_v[j] == sorted_v[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j + 1)   # average of 1-based positions
        t = j - i
        tie_term += t ** 3 - t
        i = j
    u_stat = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    mu = n1 * n2 / 2.0
    sigma2 = (n1 * n2 / 12.0) * ((total + 1)
                                 - tie_term / (total * (total - 1)))
    if sigma2 <= 0:
        return 1.0
    z = max(abs(u_stat - mu) - 0.5, 0.0) / math.sqrt(sigma2)
    return float(math.erfc(z / math.sqrt(2.0)))


def _normalize_columns(W):
    norms = np.linalg.norm(W, axis=0)
    out = np.where(norms[None, :] > _TINY, W / np.maximum(norms, _TINY)[None, :],
                   0.0)
    return out, norms


def custom_cluster(W_all, max_iters=100):
    """Align the basis columns of P runs into k clusters, one column per run
    and cluster, by alternating assignment (Hungarian on cosine similarity)
    and centroid updates (normalized cluster means). Returns the aligned
    stack and the per-run column orderings; aligned[q][:, c] is run q's
    member of cluster c. The total cosine similarity never decreases."""
    stack = np.asarray(W_all, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[0] < 2:
        raise ValueError("need a stack of at least 2 factor matrices")
    num, _, k = stack.shape
    normed = np.empty_like(stack)
    for q in range(num):
        normed[q], norms = _normalize_columns(stack[q])
        if np.any(norms <= _TINY):
            warnings.warn("run %d has an all-zero basis column" % q)
    cents = normed[0].copy()
    orderings = [np.arange(k) for _ in range(num)]
    for _ in range(max_iters):
        prev = [o.copy() for o in orderings]
        for q in range(num):
            sim = normed[q].T @ cents        # sim[a, c]: column a vs centroid c
            rows, cols = linear_sum_assignment(-sim)
            perm = np.empty(k, dtype=np.int64)
            perm[cols] = rows                # perm[c] = source column for cluster c
            orderings[q] = perm
        mean = np.zeros_like(cents)
        for q in range(num):
            mean += normed[q][:, orderings[q]]
        cents, _ = _normalize_columns(mean / num)
        if all(np.array_equal(p, o) for p, o in zip(prev, orderings)):
            break
    aligned = np.stack([stack[q][:, orderings[q]] for q in range(num)])
    return aligned, orderings


def silhouette_scores(aligned):
    """Per-cluster mean silhouette under cosine distance. Point (q, c) is
    run q's aligned column c; its cluster is c. A single cluster scores 1
    by convention; degenerate points (a = b = 0) score 0."""
    stack = np.asarray(aligned, dtype=np.float64)
    if stack.ndim != 3:
        raise ValueError("expected a stack of aligned factor matrices")
    num, _, k = stack.shape
    if k == 1:
        return np.ones(1)
    cols = np.transpose(stack, (0, 2, 1)).reshape(num * k, -1)
    normed, _ = _normalize_columns(cols.T)
    sim = normed.T @ normed
    dist = np.maximum(1.0 - sim, 0.0)
    labels = np.tile(np.arange(k), num)
    scores = np.zeros(num * k)
    for i in range(num * k):
        same = labels == labels[i]
        a = dist[i, same].sum() / max(same.sum() - 1, 1)
        b = math.inf
        for c in range(k):
            if c == labels[i]:
                continue
            b = min(b, dist[i, labels == c].mean())
        denom = max(a, b)
        scores[i] = 0.0 if denom <= _TINY else (b - a) / denom
    return np.array([scores[labels == c].mean() for c in range(k)])


def _perturb(X, spec, rng):
    if spec.boolean_mode:
        return perturb_boolean(X, spec.eps_pos, spec.eps_neg, rng)
    return perturb_uniform(X, spec.epsilon, rng)


def _fit_one(X, M, spec, k, q):
    rng = RandomSource(spec.seed, stream=k * 1000 + q)
    opts = replace(spec.options,
                   seed=RandomSource(spec.seed, stream=_SOLVER_STREAM + k * 1000 + q))
    Xq = _perturb(X, spec, rng)
    if spec.solver == "nmf":
        return nmf_mu(Xq, k, opts)
    if spec.solver == "wnmf":
        return wnmf(Xq, M, k, opts)
    if spec.solver == "rnmf":
        return rnmf(Xq, M, k, opts)
    return bnmf(Xq, k, thresholder=spec.thresholder, opts=opts)


def _boolean_factors(spec):
    return spec.solver == "bnmf" and spec.thresholder != "uniform"


def _scan_one_k(X, M, spec, k):
    """Run the full ensemble at one rank. Returns a RankRecord."""
    num = spec.num_perturbations
    models, messages = [], []
    for q in range(num):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                models.append(_fit_one(X, M, spec, k, q))
        except Exception as exc:   # solver failure: record and move on
            messages.append("k=%d q=%d: %s" % (k, q, exc))
    failures = num - len(models)
    record = RankRecord(k=k, valid=True, failures=failures,
                        failure_messages=messages)
    if failures > 0.2 * num or len(models) < 2:
        record.valid = False
        return record

    boolean_product = _boolean_factors(spec)
    recons = np.stack([m.predict(boolean_product=boolean_product)
                       for m in models])
    record.uncertainty = uncertainty_matrix(recons)

    stack = np.stack([m.W for m in models])
    if boolean_product:
        cluster = boolean_cluster(stack)
        aligned = align_boolean_stack(stack, cluster)
        robust_w = cluster.centroids.astype(np.float64)
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            aligned, _ = custom_cluster(stack)
        robust_w = np.median(aligned, axis=0)
    record.silhouettes = silhouette_scores(aligned)
    record.min_silhouette = float(record.silhouettes.min())
    record.mean_silhouette = float(record.silhouettes.mean())

    target = X
    bias_kwargs = {}
    if spec.solver == "rnmf":
        # biases need no column alignment; aggregate them entrywise and
        # regress H against the bias-removed residual
        row_b = np.median(np.stack([m.row_bias for m in models]), axis=0)
        col_b = np.median(np.stack([m.col_bias for m in models]), axis=0)
        offset = float(np.median([m.global_offset for m in models]))
        target = X - row_b[:, None] - col_b[None, :] - offset
        bias_kwargs = dict(row_bias=row_b, col_bias=col_b,
                           global_offset=offset)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        regressed_h = nnls_regress(target, robust_w)
    thresholds = None
    if boolean_product:
        robust_w, regressed_h, thresholds = binarize_factors(
            robust_w, regressed_h, method=spec.thresholder, X=X)
    record.model = FactorModel(W=robust_w, H=regressed_h, kind=spec.solver,
                               thresholds=thresholds, **bias_kwargs)
    record.prediction = record.model.predict(boolean_product=boolean_product)

    diff = X - record.prediction
    denom = float(np.sum(X * X))
    record.relative_error = float(np.sum(diff * diff) / denom) if denom > 0 \
        else math.nan
    col_norms = np.linalg.norm(X, axis=0)
    record.column_errors = (np.linalg.norm(diff, axis=0)
                            / np.where(col_norms > 0, col_norms, 1.0))
    return record


def rank_scan(X, spec, k_min, k_max, M=None, jobs=1):
    """Scan candidate ranks k_min..k_max with a perturbation ensemble each.

    M marks observed entries for the masked solvers (wnmf, rnmf, lmf); it
    defaults to all-observed. A rank is invalid when more than 20% of its
    solver runs fail. Adjacent valid ranks get a rank-sum p-value comparing
    their column-error distributions (diagnostic only).
    """
    X = as_matrix(X, "X")
    if not (1 <= k_min <= k_max):
        raise ValueError("need 1 <= k_min <= k_max")
    if M is None:
        M = np.ones_like(X)
    M = as_mask(M, X.shape, "M")
    ks = list(range(k_min, k_max + 1))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_scan_one_k, [X] * len(ks),
                                    [M] * len(ks), [spec] * len(ks), ks))
    else:
        records = [_scan_one_k(X, M, spec, k) for k in ks]
    by_k = {rec.k: rec for rec in records}
    valid = [k for k in ks if by_k[k].valid]
    pvalues = []
    for lo, hi in zip(valid, valid[1:]):
        if hi == lo + 1:
            pvalues.append((lo, hi, wilcoxon_ranksum(by_k[lo].column_errors,
                                                     by_k[hi].column_errors)))
    return RankScanResult(k_values=ks, records=by_k,
                          pvalues_adjacent=pvalues)


def select_k(scan, sill_thr=0.8):
    """Pick the largest rank whose minimum silhouette clears the threshold.

    Falls back to the argmax of minimum silhouette (flagging the scan as
    low-confidence) when no rank clears it. Rank-sum p-values of the chosen
    rank against every larger valid rank are attached as diagnostics; they
    never influence the choice. The scan's k_opt / low_confidence /
    pvalues_vs_selected fields are filled in place."""
    valid = scan.valid_ks()
    if not valid:
        scan.k_opt = None
        scan.low_confidence = True
        scan.sil_threshold = sill_thr
        return None
    passing = [k for k in valid if scan.records[k].min_silhouette >= sill_thr]
    if passing:
        k_opt = max(passing)
        scan.low_confidence = False
    else:
        sils = [scan.records[k].min_silhouette for k in valid]
        k_opt = valid[int(np.argmax(sils))]
        scan.low_confidence = True
    scan.k_opt = k_opt
    scan.sil_threshold = sill_thr
    scan.pvalues_vs_selected = {
        k: wilcoxon_ranksum(scan.records[k_opt].column_errors,
                            scan.records[k].column_errors)
        for k in valid if k > k_opt
    }
    return k_opt


def write_scan_csv(path, scan):
    """One row per rank: k, min/mean silhouette, relative error, and the
    rank-sum p-value against the next rank (empty when unavailable)."""
    from .matio import _format_value
    next_p = {lo: p for lo, _, p in scan.pvalues_adjacent}
    lines = ["k,min_silhouette,mean_silhouette,relative_error,p_value_vs_next"]
    for k in scan.k_values:
        rec = scan.records[k]
        if not rec.valid:
            lines.append("%d,,,," % k)
            continue
        p = next_p.get(k)
        lines.append(",".join([
            str(k),
            _format_value(rec.min_silhouette),
            _format_value(rec.mean_silhouette),
            _format_value(rec.relative_error),
            "" if p is None else _format_value(p),
        ]))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
