"""Experiment configuration and the cross-validated sweep pipeline.

A sweep walks (seed, test_size, fold) cells: each cell splits the data,
scans candidate ranks, picks one, predicts the held-out cells, attaches
uncertainties, and scores an EvalReport. Artifacts land in one output
directory: a config snapshot and versions file, per-run JSON (predictions
and uncertainties included, so metrics can be recomputed offline), one
aggregate CSV keyed by (method, test_size, seed, fold), and a separate
timings CSV so the aggregate stays byte-deterministic.
"""

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np
import scipy.sparse as sp

from .booleans import binarize_factors
from .core import RandomSource, boolean_matmul, is_boolean
from .datasets import (SPLIT_STREAM, gen_dog, gen_gaussian,
                       gen_planted_boolean, gen_swimmer, load_ppi_edgelist,
                       split_stratified)
from .matio import _format_value, read_dense_csv, write_dense_csv
from .metrics import (EvalReport, pr_auc, pearson_uq_error, rmse,
                      rmse_non_abstained, roc_auc, smr)
from .ranksel import EnsembleSpec, rank_scan, select_k
from .solvers import SolverOptions, lmf
from .uq import (abstain, abstention_threshold, lmf_ensemble_predict,
                 uq_weights)

# method name -> underlying ensemble solver (None: plain logistic model)
_METHODS = {
    "nmfk": "nmf",
    "wnmfk": "wnmf",
    "rnmfk": "rnmf",
    "bnmfk": "bnmf",
    "lmf": None,
    "wnmfk_lmf": "wnmf",
    "rnmfk_lmf": "rnmf",
    "bnmfk_lmf": "bnmf",
}
_THRESHOLDS = ("none", "otsu", "kmeans", "search")
_GENERATORS = ("dog", "swimmer", "gaussian", "planted")

_CSV_COLUMNS = ("method", "dataset", "test_size", "seed", "fold", "k_opt",
                "low_confidence", "rmse", "rmse_non_abstained",
                "fraction_abstained", "roc_auc", "pr_auc", "uq_roc_auc",
                "uq_pr_auc", "pearson_uq_error", "smr", "nsmr", "error")


@dataclass
class ExperimentConfig:
    """Flat experiment configuration.

    Every field maps 1:1 to a key in the plain-text config file and to a
    command-line flag of the same name; flags override file values.
    """
    dataset: str = "gaussian"         # generator name or a data file path
    n: int = 50
    m: int = 100
    k_true: int = 3
    noise: float = 0.0
    w_density: float = 0.35
    h_density: float = 0.35
    flip: float = 0.0
    method: str = "wnmfk"
    boolean_threshold: str = "none"
    k_min: int = 1
    k_max: int = 8
    perturbations: int = 10
    epsilon: float = 0.015
    eps_pos: float = 0.015
    eps_neg: float = 0.015
    test_sizes: tuple = (0.1,)
    folds: int = 10
    seeds: tuple = (0,)
    max_iters: int = 300
    tol: float = 1e-6
    learn_rate: float = 0.005
    factor_penalty: float = 0.01
    lmf_max_iters: int = 500
    sil_threshold: float = 0.8
    min_degree: int = 5
    output: str = "mflink_out"
    jobs: int = 1

    def validate(self):
        """Raise on an inconsistent configuration; return warning strings."""
        warnings = []
        if self.method not in _METHODS:
            raise ValueError("unknown method %r (choose from %s)"
                             % (self.method, ", ".join(sorted(_METHODS))))
        if self.boolean_threshold not in _THRESHOLDS:
            raise ValueError("unknown boolean_threshold %r"
                             % (self.boolean_threshold,))
        solver = _METHODS[self.method]
        if solver == "bnmf" and self.boolean_threshold == "none":
            raise ValueError("%s needs a boolean_threshold "
                             "(otsu, kmeans, or search)" % self.method)
        if solver in (None, "rnmf") and self.boolean_threshold != "none":
            raise ValueError("%s does not take a boolean_threshold"
                             % self.method)
        if self.boolean_threshold == "search":
            warnings.append("threshold search is exhaustive and much "
                            "slower than otsu or kmeans")
        if not 1 <= self.k_min <= self.k_max:
            raise ValueError("need 1 <= k_min <= k_max")
        if self.method == "lmf" and self.k_min != self.k_max:
            raise ValueError("method lmf fits one fixed rank; "
                             "set k_min == k_max")
        if self.folds < 1:
            raise ValueError("folds must be at least 1")
        if self.perturbations < 2:
            raise ValueError("need at least 2 perturbations")
        if not self.test_sizes:
            raise ValueError("need at least one test size")
        for t in self.test_sizes:
            if not 0.0 < t < 1.0:
                raise ValueError("test sizes must lie in (0, 1)")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")
        return warnings

    def to_mapping(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                out[f.name] = ",".join(_format_value(x) for x in v)
            elif isinstance(v, float):
                out[f.name] = _format_value(v)
            else:
                out[f.name] = str(v)
        return out


def _parse_typed(name, text, kind):
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            parts = [p for p in text.split(",") if p.strip()]
            vals = [float(p) if ("." in p or "e" in p.lower()) else int(p)
                    for p in (q.strip() for q in parts)]
            return tuple(vals)
    except ValueError:
        raise ValueError("bad value for %s: %r" % (name, text))
    return text


def config_from_mapping(mapping):
    """Build a config from string key-value pairs (file or flag values)."""
    kinds = {f.name: type(f.default) for f in fields(ExperimentConfig)}
    values = {}
    for key, text in mapping.items():
        name = key.strip()
        if name == "seed":            # convenience alias for a single seed
            name = "seeds"
        if name not in kinds:
            raise ValueError("unknown config key %r" % (key,))
        if isinstance(text, str):
            values[name] = _parse_typed(name, text.strip(), kinds[name])
        else:
            values[name] = text
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


def read_config_file(path):
    """Parse a flat key=value config file; # starts a comment line."""
    mapping = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError("%s:%d: expected key=value, got %r"
                                 % (path, lineno, line))
            key, _, value = line.partition("=")
            mapping[key.strip()] = value.strip()
    return mapping


# --- dataset construction ---------------------------------------------------

def make_dataset(config, seed):
    """Return (X, M, rank_or_None) for one sweep seed.

    The image-like sets are procedural and ignore the seed; the random
    generators consume it. A path is loaded as a dense CSV matrix or, for
    any other extension, as a labeled interaction edge list.
    """
    name = config.dataset
    if name == "dog":
        gt = gen_dog()
        return gt.X, None, gt.rank
    if name == "swimmer":
        gt = gen_swimmer()
        return gt.X, None, gt.rank
    if name == "gaussian":
        gt = gen_gaussian(n=config.n, m=config.m, k=config.k_true,
                          seed=seed, noise=config.noise)
        return gt.X, None, gt.rank
    if name == "planted":
        gt = gen_planted_boolean(n=config.n, m=config.m, k=config.k_true,
                                 w_density=config.w_density,
                                 h_density=config.h_density,
                                 flip=config.flip, seed=seed)
        return gt.X, None, gt.rank
    if not os.path.exists(name):
        raise ValueError("unknown dataset %r (not a generator name or file)"
                         % (name,))
    if name.endswith(".csv"):
        return read_dense_csv(name), None, None
    data = load_ppi_edgelist(name, min_degree=config.min_degree)
    X = data.X.toarray() if sp.issparse(data.X) else data.X
    M = data.M.toarray() if sp.issparse(data.M) else data.M
    return X, M, None


# --- one (seed, test_size, fold) cell ---------------------------------------

def _run_seed(config, seed, fold):
    # distinct per-cell seed so folds and sweep seeds never share streams
    return 1000 * seed + fold


def _solver_options(config, seed, fold, max_iters):
    return SolverOptions(max_iters=max_iters, tol=config.tol,
                         learn_rate=config.learn_rate,
                         factor_penalty=config.factor_penalty,
                         seed=RandomSource(_run_seed(config, seed, fold)))


def run_single(config, X, M, test_size, seed, fold):
    """Execute one sweep cell; never raises. Returns (row, payload, timings):
    the aggregate CSV row, the per-run JSON payload, and (stage, seconds)
    pairs. A failed stage records its message and leaves metrics nan."""
    solver = _METHODS[config.method]
    report = EvalReport()
    timings = []
    payload = {"method": config.method, "dataset": config.dataset,
               "test_size": test_size, "seed": seed, "fold": fold,
               "k_opt": None, "low_confidence": None, "error": None}
    k_opt = None
    low_confidence = None
    try:
        t0 = time.perf_counter()
        split = split_stratified(
            X, test_size,
            RandomSource(_run_seed(config, seed, fold),
                         SPLIT_STREAM + fold), M=M)
        timings.append(("split", time.perf_counter() - t0))
        boolean_data = is_boolean(X)
        uncertainty = None
        scan_summary = None

        t0 = time.perf_counter()
        if solver is None:
            opts = _solver_options(config, seed, fold, config.lmf_max_iters)
            model = lmf(split.X_train, split.M_train, config.k_min, opts)
            k_opt = config.k_min
            low_confidence = False
            base = model.predict()
            timings.append(("scan", time.perf_counter() - t0))
        else:
            spec = EnsembleSpec(
                solver=solver,
                num_perturbations=config.perturbations,
                epsilon=config.epsilon,
                eps_pos=config.eps_pos, eps_neg=config.eps_neg,
                boolean_mode=(solver == "bnmf"),
                thresholder=(config.boolean_threshold
                             if solver == "bnmf" else "otsu"),
                seed=_run_seed(config, seed, fold),
                options=_solver_options(config, seed, fold,
                                        config.max_iters))
            scan = rank_scan(split.X_train, spec, config.k_min,
                             config.k_max, M=split.M_train,
                             jobs=config.jobs)
            timings.append(("scan", time.perf_counter() - t0))
            t0 = time.perf_counter()
            select_k(scan, sill_thr=config.sil_threshold)
            timings.append(("select", time.perf_counter() - t0))
            if scan.k_opt is None:
                raise RuntimeError("rank scan produced no valid rank")
            k_opt = scan.k_opt
            low_confidence = scan.low_confidence
            rec = scan.records[k_opt]
            base = rec.prediction
            if solver in ("nmf", "wnmf") \
                    and config.boolean_threshold != "none" \
                    and not config.method.endswith("_lmf"):
                Wb, Hb, _pair = binarize_factors(
                    rec.model.W, rec.model.H, config.boolean_threshold,
                    X=split.X_train)
                base = boolean_matmul(Wb, Hb)
            uncertainty = rec.uncertainty
            scan_summary = {
                "k_values": list(scan.k_values),
                "min_silhouette": [scan.records[k].min_silhouette
                                   for k in scan.k_values],
                "relative_error": [scan.records[k].relative_error
                                   for k in scan.k_values],
            }

        t0 = time.perf_counter()
        if config.method.endswith("_lmf"):
            opts = _solver_options(config, seed, fold, config.lmf_max_iters)
            prediction = lmf_ensemble_predict(
                split.X_train, split.M_train, scan.records[k_opt].model,
                k_opt, opts)
        else:
            prediction = base
        timings.append(("predict", time.perf_counter() - t0))

        t0 = time.perf_counter()
        tau = None
        decision = None
        weights = None
        if uncertainty is not None:
            tau = abstention_threshold(uncertainty, split.train_idx)
            decision = abstain(uncertainty, tau, split.test_idx)
            weights = uq_weights(uncertainty, split.train_idx,
                                 split.test_idx)
        timings.append(("uq", time.perf_counter() - t0))

        t0 = time.perf_counter()
        values = {"rmse": rmse(X, prediction, split.test_idx)}
        if decision is not None:
            values["rmse_non_abstained"] = rmse_non_abstained(
                X, prediction, split.test_idx, decision.abstain_idx)
            values["fraction_abstained"] = decision.fraction_abstained
        if boolean_data:
            labels = X.ravel()[split.test_idx]
            scores = np.asarray(prediction, dtype=np.float64) \
                .ravel()[split.test_idx]
            values["roc_auc"] = roc_auc(labels, scores)
            values["pr_auc"] = pr_auc(labels, scores)
            if weights is not None:
                values["uq_roc_auc"] = roc_auc(labels, scores, weights)
                values["uq_pr_auc"] = pr_auc(labels, scores, weights)
        if uncertainty is not None:
            values["pearson_uq_error"] = pearson_uq_error(
                uncertainty.values, X, prediction, split.test_idx)
            values["smr"] = smr(uncertainty.values, split.test_idx)
        report = EvalReport(**values)
        timings.append(("eval", time.perf_counter() - t0))

        payload.update({
            "k_opt": k_opt,
            "low_confidence": bool(low_confidence),
            "scan": scan_summary,
            "tau": tau,
            "test_idx": split.test_idx.tolist(),
            "abstain_idx": (decision.abstain_idx.tolist()
                            if decision is not None else None),
            "uq_weights": (weights.tolist()
                           if weights is not None else None),
            "prediction": np.asarray(prediction,
                                     dtype=np.float64).tolist(),
            "uncertainty": (uncertainty.values.tolist()
                            if uncertainty is not None else None),
        })
    except Exception as exc:                       # recorded, sweep goes on
        payload["error"] = "%s: %s" % (type(exc).__name__, exc)

    payload["metrics"] = {name: getattr(report, name)
                          for name in report.metric_names()}
    row = {"method": config.method, "dataset": config.dataset,
           "test_size": test_size, "seed": seed, "fold": fold,
           "k_opt": k_opt, "low_confidence": low_confidence,
           "error": payload["error"]}
    row.update(payload["metrics"])
    return row, payload, timings


def _run_task(args):
    config, X, M, test_size, seed, fold = args
    # worker processes run scans serially; parallelism lives at this level
    inner = replace(config, jobs=1)
    return run_single(inner, X, M, test_size, seed, fold)


# --- sweep orchestration -----------------------------------------------------

def _versions():
    out = {"python": ".".join(str(v) for v in __import__("sys")
                              .version_info[:3]),
           "numpy": np.__version__}
    try:
        out["scipy"] = __import__("scipy").__version__
    except Exception:
        pass
    try:
        from importlib.metadata import version
        out["package"] = version("artifact")
    except Exception:
        out["package"] = "unknown"
    return out


def _json_dump(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=None,
                  separators=(",", ":"))
        fh.write("\n")


def write_config_snapshot(path, config):
    lines = ["%s=%s" % (k, v) for k, v in config.to_mapping().items()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return _format_value(value)
    return str(value)


def write_aggregate_csv(path, rows):
    """Aggregate CSV: one row per sweep cell, fixed column order, floats in
    shortest round-trip form, nan spelled out. Timing never appears here."""
    out = [",".join(_CSV_COLUMNS)]
    for row in rows:
        out.append(",".join(_csv_cell(row.get(c)) for c in _CSV_COLUMNS))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")


def write_timings_csv(path, timings):
    out = ["test_size,seed,fold,stage,seconds"]
    for (test_size, seed, fold, stage, seconds) in timings:
        out.append("%s,%d,%d,%s,%s" % (_format_value(test_size), seed,
                                       fold, stage,
                                       _format_value(seconds)))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")


def _run_name(test_size, seed, fold):
    return "run_ts%s_seed%d_fold%d" % (_format_value(test_size), seed, fold)


def run_sweep(config, progress=None):
    """Run the full (seed, test_size, fold) grid and persist all artifacts.

    Returns the list of aggregate rows (in written order). Cells execute
    concurrently up to config.jobs; a single cell hands the job budget to
    its rank scan instead. Aggregation order never depends on scheduling.
    """
    config.validate()
    outdir = config.output
    os.makedirs(os.path.join(outdir, "runs"), exist_ok=True)
    write_config_snapshot(os.path.join(outdir, "config.txt"), config)
    _json_dump(os.path.join(outdir, "versions.json"), _versions())

    datasets = {}
    for seed in config.seeds:
        datasets[seed] = make_dataset(config, seed)

    cells = [(test_size, seed, fold)
             for test_size in config.test_sizes
             for seed in config.seeds
             for fold in range(config.folds)]
    tasks = []
    for (test_size, seed, fold) in cells:
        X, M, _rank = datasets[seed]
        tasks.append((config, X, M, test_size, seed, fold))

    if config.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [run_single(*task) for task in tasks]

    rows = []
    timings = []
    nsmr_scale = max(config.test_sizes)
    for (test_size, seed, fold), (row, payload, cell_times) \
            in zip(cells, results):
        s = row.get("smr")
        row["nsmr"] = (s * test_size / nsmr_scale
                       if s is not None and not math.isnan(s)
                       else math.nan)
        payload["metrics"]["nsmr"] = row["nsmr"]
        rows.append(row)
        _json_dump(os.path.join(outdir, "runs",
                                _run_name(test_size, seed, fold) + ".json"),
                   payload)
        for stage, seconds in cell_times:
            timings.append((test_size, seed, fold, stage, seconds))
        if progress is not None:
            progress(row)

    write_aggregate_csv(os.path.join(outdir, "aggregate.csv"), rows)
    write_timings_csv(os.path.join(outdir, "timings.csv"), timings)
    return rows


# --- subcommand bodies --------------------------------------------------------

def cmd_generate(config):
    """Write X.csv and ground_truth.json for the configured dataset."""
    outdir = config.output
    os.makedirs(outdir, exist_ok=True)
    written = []
    multi = len(config.seeds) > 1 and config.dataset in ("gaussian",
                                                         "planted")
    for seed in config.seeds:
        sub = os.path.join(outdir, "seed_%d" % seed) if multi else outdir
        os.makedirs(sub, exist_ok=True)
        if config.dataset == "dog":
            gt = gen_dog()
        elif config.dataset == "swimmer":
            gt = gen_swimmer()
        elif config.dataset == "gaussian":
            gt = gen_gaussian(n=config.n, m=config.m, k=config.k_true,
                              seed=seed, noise=config.noise)
        elif config.dataset == "planted":
            gt = gen_planted_boolean(n=config.n, m=config.m,
                                     k=config.k_true,
                                     w_density=config.w_density,
                                     h_density=config.h_density,
                                     flip=config.flip, seed=seed)
        else:
            raise ValueError("generate needs a generator dataset, got %r"
                             % (config.dataset,))
        xpath = os.path.join(sub, "X.csv")
        write_dense_csv(xpath, gt.X)
        _json_dump(os.path.join(sub, "ground_truth.json"),
                   {"dataset": config.dataset, "seed": seed,
                    "rank": gt.rank, "W": gt.W.tolist(),
                    "H": gt.H.tolist()})
        written.append(xpath)
        if not multi:
            break
    return written


def cmd_split(config):
    """Persist the (test_size, fold) splits as JSON index files."""
    outdir = config.output
    os.makedirs(os.path.join(outdir, "splits"), exist_ok=True)
    written = []
    for seed in config.seeds:
        X, M, _rank = make_dataset(config, seed)
        for test_size in config.test_sizes:
            for fold in range(config.folds):
                split = split_stratified(
                    X, test_size,
                    RandomSource(_run_seed(config, seed, fold),
                                 SPLIT_STREAM + fold), M=M)
                path = os.path.join(
                    outdir, "splits",
                    _run_name(test_size, seed, fold) + ".json")
                _json_dump(path, {
                    "test_size": test_size, "seed": seed, "fold": fold,
                    "train_idx": split.train_idx.tolist(),
                    "test_idx": split.test_idx.tolist()})
                written.append(path)
    return written


def cmd_run(config):
    return run_sweep(config)


def recompute_report(X, payload):
    """Rebuild an EvalReport from a persisted run payload."""
    if payload.get("error"):
        return EvalReport()
    test_idx = np.asarray(payload["test_idx"], dtype=np.int64)
    prediction = np.asarray(payload["prediction"], dtype=np.float64)
    values = {"rmse": rmse(X, prediction, test_idx)}
    abstain_idx = payload.get("abstain_idx")
    if abstain_idx is not None:
        abstain_idx = np.asarray(abstain_idx, dtype=np.int64)
        values["rmse_non_abstained"] = rmse_non_abstained(
            X, prediction, test_idx, abstain_idx)
        values["fraction_abstained"] = (abstain_idx.size / test_idx.size
                                        if test_idx.size else math.nan)
    if is_boolean(X):
        labels = X.ravel()[test_idx]
        scores = prediction.ravel()[test_idx]
        values["roc_auc"] = roc_auc(labels, scores)
        values["pr_auc"] = pr_auc(labels, scores)
        if payload.get("uq_weights") is not None:
            weights = np.asarray(payload["uq_weights"], dtype=np.float64)
            values["uq_roc_auc"] = roc_auc(labels, scores, weights)
            values["uq_pr_auc"] = pr_auc(labels, scores, weights)
    if payload.get("uncertainty") is not None:
        U = np.asarray(payload["uncertainty"], dtype=np.float64)
        values["pearson_uq_error"] = pearson_uq_error(U, X, prediction,
                                                      test_idx)
        values["smr"] = smr(U, test_idx)
    report = EvalReport(**values)
    report.nsmr = payload["metrics"].get("nsmr", math.nan)
    return report


def cmd_eval(run_dir):
    """Recompute metrics for every persisted run; writes eval/<run>.json.

    Pure function of the persisted artifacts: re-running on unchanged
    inputs reproduces the files byte for byte.
    """
    config = config_from_mapping(
        read_config_file(os.path.join(run_dir, "config.txt")))
    runs_dir = os.path.join(run_dir, "runs")
    if not os.path.isdir(runs_dir):
        raise FileNotFoundError("no runs directory under %r" % (run_dir,))
    eval_dir = os.path.join(run_dir, "eval")
    os.makedirs(eval_dir, exist_ok=True)
    datasets = {}
    written = []
    for name in sorted(os.listdir(runs_dir)):
        if not name.endswith(".json"):
            continue
        with open(os.path.join(runs_dir, name), "r",
                  encoding="utf-8") as fh:
            payload = json.load(fh)
        seed = payload["seed"]
        if seed not in datasets:
            datasets[seed] = make_dataset(config, seed)
        X, _M, _rank = datasets[seed]
        report = recompute_report(X, payload)
        out = {"run": name[: -len(".json")],
               "metrics": {k: getattr(report, k)
                           for k in report.metric_names()},
               "stored_metrics": payload["metrics"],
               "error": payload.get("error")}
        path = os.path.join(eval_dir, name)
        _json_dump(path, out)
        written.append(path)
    return written


def cmd_bench(config):
    """Time one sweep cell per pipeline stage; writes bench.csv."""
    config.validate()
    outdir = config.output
    os.makedirs(outdir, exist_ok=True)
    seed = config.seeds[0]
    test_size = config.test_sizes[0]
    X, M, _rank = make_dataset(config, seed)
    t0 = time.perf_counter()
    _row, _payload, timings = run_single(config, X, M, test_size, seed, 0)
    total = time.perf_counter() - t0
    lines = ["method,stage,seconds"]
    for stage, seconds in timings:
        lines.append("%s,%s,%s" % (config.method, stage,
                                   _format_value(seconds)))
    lines.append("%s,total,%s" % (config.method, _format_value(total)))
    path = os.path.join(outdir, "bench.csv")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
