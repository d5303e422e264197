"""Matrix-factorization toolkit for missing-link prediction with automatic
rank determination and uncertainty quantification."""

from .booleans import binarize_factors, boolean_cluster, kmeans_threshold, \
    otsu_threshold, search_thresholds
from .core import RandomSource, boolean_matmul, is_boolean, nnls_regress, \
    perturb_boolean, perturb_uniform, relative_error, relative_residual
from .datasets import (gen_dog, gen_gaussian, gen_planted_boolean,
                       gen_swimmer, load_ppi_edgelist, split_stratified)
from .experiments import ExperimentConfig, run_sweep
from .matio import read_dense_csv, read_matrix_market, write_dense_csv, \
    write_matrix_market
from .metrics import (EvalReport, aggregate_reports, nsmr, pr_auc,
                      pearson_uq_error, rmse, rmse_non_abstained, roc_auc,
                      smr)
from .ranksel import (EnsembleSpec, RankScanResult, custom_cluster,
                      rank_scan, select_k, silhouette_scores,
                      wilcoxon_ranksum, write_scan_csv)
from .solvers import (DivergenceError, FactorModel, SolverOptions, bnmf,
                      lmf, load_model, nmf_mu, rnmf, save_model, sigmoid,
                      wnmf)
from .uq import (abstain, abstention_threshold, combine_with_biases,
                 lmf_ensemble_predict, uncertainty_matrix, uq_weights)

__version__ = "0.1.0"

__all__ = [
    "RandomSource", "boolean_matmul", "is_boolean", "nnls_regress",
    "perturb_boolean", "perturb_uniform", "relative_error",
    "relative_residual",
    "read_dense_csv", "write_dense_csv", "read_matrix_market",
    "write_matrix_market",
    "binarize_factors", "boolean_cluster", "otsu_threshold",
    "kmeans_threshold", "search_thresholds",
    "DivergenceError", "FactorModel", "SolverOptions", "nmf_mu", "wnmf",
    "rnmf", "bnmf", "lmf", "sigmoid", "save_model", "load_model",
    "EnsembleSpec", "RankScanResult", "custom_cluster", "rank_scan",
    "select_k", "silhouette_scores", "wilcoxon_ranksum", "write_scan_csv",
    "uncertainty_matrix", "abstention_threshold", "abstain", "uq_weights",
    "combine_with_biases", "lmf_ensemble_predict",
    "EvalReport", "aggregate_reports", "rmse", "rmse_non_abstained",
    "roc_auc", "pr_auc", "pearson_uq_error", "smr", "nsmr",
    "gen_dog", "gen_swimmer", "gen_gaussian", "gen_planted_boolean",
    "load_ppi_edgelist", "split_stratified",
    "ExperimentConfig", "run_sweep",
]
