"""Tests for the sweep pipeline, its artifacts, and the CLI."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from mflink.cli import main
from mflink.datasets import gen_planted_boolean
from mflink.experiments import (ExperimentConfig, cmd_bench, cmd_eval,
                                cmd_generate, cmd_split, config_from_mapping,
                                make_dataset, read_config_file, run_single,
                                run_sweep)
from mflink.matio import read_dense_csv


def _tiny_config(tmp_path, **overrides):
    values = dict(dataset="planted", n=30, m=30, k_true=2,
                  method="wnmfk", k_min=1, k_max=3, perturbations=3,
                  test_sizes=(0.2,), folds=2, seeds=(0,), max_iters=60,
                  output=str(tmp_path / "out"))
    values.update(overrides)
    cfg = ExperimentConfig(**values)
    cfg.validate()
    return cfg


class TestConfig:
    def test_file_round_trip(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("# comment\nmethod=bnmfk\nboolean_threshold=otsu\n"
                        "test_sizes=0.1,0.3\nseeds=0,1\nk_max=4\n")
        cfg = config_from_mapping(read_config_file(str(path)))
        assert cfg.method == "bnmfk"
        assert cfg.test_sizes == (0.1, 0.3)
        assert cfg.seeds == (0, 1)
        assert cfg.k_max == 4

    def test_malformed_config_line_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("method wnmfk\n")
        with pytest.raises(ValueError, match=r":1:"):
            read_config_file(str(path))

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            config_from_mapping({"methodd": "wnmfk"})

    def test_seed_alias_sets_seeds(self):
        cfg = config_from_mapping({"seed": "7"})
        assert cfg.seeds == (7,)

    def test_method_threshold_compatibility(self):
        with pytest.raises(ValueError):
            ExperimentConfig(method="bnmfk").validate()
        with pytest.raises(ValueError):
            ExperimentConfig(method="rnmfk",
                             boolean_threshold="otsu").validate()
        with pytest.raises(ValueError):
            ExperimentConfig(method="lmf", k_min=1, k_max=3).validate()
        with pytest.raises(ValueError):
            ExperimentConfig(method="nope").validate()
        with pytest.raises(ValueError):
            ExperimentConfig(test_sizes=(1.5,)).validate()

    def test_search_threshold_flagged_slow(self):
        cfg = ExperimentConfig(method="bnmfk", boolean_threshold="search")
        warnings = cfg.validate()
        assert any("slow" in w for w in warnings)


class TestMakeDataset:
    def test_generators(self):
        cfg = ExperimentConfig(dataset="dog")
        X, M, rank = make_dataset(cfg, 0)
        assert X.shape == (400, 16) and M is None and rank == 4
        cfg = ExperimentConfig(dataset="gaussian", n=10, m=12, k_true=2)
        A, _, _ = make_dataset(cfg, 3)
        B, _, _ = make_dataset(cfg, 3)
        C, _, _ = make_dataset(cfg, 4)
        assert np.array_equal(A, B) and not np.array_equal(A, C)

    def test_csv_path(self, tmp_path):
        from mflink.matio import write_dense_csv
        X = np.arange(6.0).reshape(2, 3)
        path = tmp_path / "X.csv"
        write_dense_csv(str(path), X)
        cfg = ExperimentConfig(dataset=str(path))
        loaded, M, rank = make_dataset(cfg, 0)
        assert np.array_equal(loaded, X) and M is None and rank is None

    def test_edgelist_path(self, tmp_path):
        path = tmp_path / "edges.txt"
        path.write_text("a b 1\nb c 1\na c 0\n")
        cfg = ExperimentConfig(dataset=str(path), min_degree=1)
        X, M, _ = make_dataset(cfg, 0)
        assert X.shape == (3, 3)
        assert M is not None and M.sum() == 6

    def test_unknown_dataset_rejected(self):
        with pytest.raises(ValueError, match="unknown dataset"):
            make_dataset(ExperimentConfig(dataset="nonesuch"), 0)


class TestRunSingle:
    def test_wnmfk_recovers_and_reports(self, tmp_path):
        cfg = _tiny_config(tmp_path)
        X, M, _ = make_dataset(cfg, 0)
        row, payload, timings = run_single(cfg, X, M, 0.2, 0, 0)
        assert row["error"] is None
        assert row["k_opt"] == 2
        assert 0.0 <= row["roc_auc"] <= 1.0
        assert np.isfinite(row["rmse"])
        assert payload["prediction"] is not None
        assert payload["uncertainty"] is not None
        stages = [s for s, _ in timings]
        assert stages == ["split", "scan", "select", "predict", "uq",
                          "eval"]

    def test_binarized_prediction_path(self, tmp_path):
        cfg = _tiny_config(tmp_path, boolean_threshold="kmeans",
                           k_min=2, k_max=2)
        X, M, _ = make_dataset(cfg, 0)
        row, payload, _ = run_single(cfg, X, M, 0.2, 0, 0)
        assert row["error"] is None
        values = set(np.asarray(payload["prediction"]).ravel().tolist())
        assert values <= {0.0, 1.0}

    def test_lmf_direct_fit_skips_uq(self, tmp_path):
        cfg = _tiny_config(tmp_path, method="lmf", k_min=2, k_max=2,
                           lmf_max_iters=100)
        X, M, _ = make_dataset(cfg, 0)
        row, payload, _ = run_single(cfg, X, M, 0.2, 0, 0)
        assert row["error"] is None
        assert row["k_opt"] == 2
        assert np.isnan(row["smr"])
        assert payload["uncertainty"] is None
        pred = np.asarray(payload["prediction"])
        assert np.all((pred > 0.0) & (pred < 1.0))    # sigmoid range

    def test_ensemble_lmf_prediction_in_unit_interval(self, tmp_path):
        cfg = _tiny_config(tmp_path, method="wnmfk_lmf", k_min=2, k_max=2,
                           lmf_max_iters=100)
        X, M, _ = make_dataset(cfg, 0)
        row, payload, _ = run_single(cfg, X, M, 0.2, 0, 0)
        assert row["error"] is None
        pred = np.asarray(payload["prediction"])
        assert np.all((pred > 0.0) & (pred < 1.0))

    def test_stage_failure_is_recorded_not_raised(self, tmp_path):
        cfg = _tiny_config(tmp_path)
        X = np.array([[1.0, 0.0], [0.0, 1.0]])
        row, payload, _ = run_single(cfg, X, None, 0.9, 0, 0)
        assert row["error"] is not None
        assert np.isnan(row["rmse"])
        assert payload["k_opt"] is None


class TestRunSweep:
    def test_artifacts_written(self, tmp_path):
        cfg = _tiny_config(tmp_path)
        rows = run_sweep(cfg)
        assert len(rows) == 2                         # 1 test size x 2 folds
        out = cfg.output
        assert os.path.exists(os.path.join(out, "aggregate.csv"))
        assert os.path.exists(os.path.join(out, "timings.csv"))
        assert os.path.exists(os.path.join(out, "config.txt"))
        assert os.path.exists(os.path.join(out, "versions.json"))
        runs = sorted(os.listdir(os.path.join(out, "runs")))
        assert runs == ["run_ts0.2_seed0_fold0.json",
                        "run_ts0.2_seed0_fold1.json"]
        header = open(os.path.join(out, "aggregate.csv")).readline()
        assert header.startswith("method,dataset,test_size,seed,fold,k_opt")
        snapshot = open(os.path.join(out, "config.txt")).read()
        assert "method=wnmfk" in snapshot
        assert "seeds=0" in snapshot

    def test_aggregate_deterministic(self, tmp_path):
        cfg_a = _tiny_config(tmp_path / "a")
        cfg_b = _tiny_config(tmp_path / "b")
        run_sweep(cfg_a)
        run_sweep(cfg_b)
        a = open(os.path.join(cfg_a.output, "aggregate.csv"), "rb").read()
        b = open(os.path.join(cfg_b.output, "aggregate.csv"), "rb").read()
        assert a == b

    def test_parallel_matches_serial(self, tmp_path):
        cfg_a = _tiny_config(tmp_path / "serial", folds=2)
        cfg_b = _tiny_config(tmp_path / "par", folds=2, jobs=2)
        run_sweep(cfg_a)
        run_sweep(cfg_b)
        a = open(os.path.join(cfg_a.output, "aggregate.csv")).read()
        b = open(os.path.join(cfg_b.output, "aggregate.csv")).read()
        assert a == b

    def test_nsmr_scales_smr_by_test_size(self, tmp_path):
        cfg = _tiny_config(tmp_path, test_sizes=(0.2, 0.4), folds=1)
        rows = run_sweep(cfg)
        by_ts = {r["test_size"]: r for r in rows}
        for ts, row in by_ts.items():
            assert row["nsmr"] == pytest.approx(row["smr"] * ts / 0.4)


class TestEval:
    def test_recompute_matches_stored_and_is_idempotent(self, tmp_path):
        cfg = _tiny_config(tmp_path, folds=1)
        run_sweep(cfg)
        first = cmd_eval(cfg.output)
        blobs = {p: open(p, "rb").read() for p in first}
        for path in first:
            doc = json.loads(open(path).read())
            for name, stored in doc["stored_metrics"].items():
                got = doc["metrics"][name]
                if stored is None or (isinstance(stored, float)
                                      and np.isnan(stored)):
                    assert got is None or np.isnan(got)
                else:
                    assert got == stored
        second = cmd_eval(cfg.output)
        for path in second:
            assert open(path, "rb").read() == blobs[path]

    def test_missing_runs_rejected(self, tmp_path):
        cfg = _tiny_config(tmp_path)
        os.makedirs(cfg.output, exist_ok=True)
        from mflink.experiments import write_config_snapshot
        write_config_snapshot(os.path.join(cfg.output, "config.txt"), cfg)
        with pytest.raises(FileNotFoundError):
            cmd_eval(cfg.output)


class TestGenerateSplitBench:
    def test_generate_dog_shape(self, tmp_path):
        cfg = ExperimentConfig(dataset="dog", output=str(tmp_path))
        paths = cmd_generate(cfg)
        X = read_dense_csv(paths[0])
        assert X.shape == (400, 16)
        truth = json.load(open(os.path.join(str(tmp_path),
                                            "ground_truth.json")))
        assert truth["rank"] == 4

    def test_generate_reproducible_bytes(self, tmp_path):
        cfg_a = ExperimentConfig(dataset="gaussian", n=10, m=12, k_true=2,
                                 seeds=(7,), output=str(tmp_path / "a"))
        cfg_b = ExperimentConfig(dataset="gaussian", n=10, m=12, k_true=2,
                                 seeds=(7,), output=str(tmp_path / "b"))
        pa = cmd_generate(cfg_a)[0]
        pb = cmd_generate(cfg_b)[0]
        assert open(pa, "rb").read() == open(pb, "rb").read()

    def test_generate_rejects_file_dataset(self, tmp_path):
        cfg = ExperimentConfig(dataset=str(tmp_path / "X.csv"),
                               output=str(tmp_path))
        with pytest.raises(ValueError):
            cmd_generate(cfg)

    def test_split_files_partition(self, tmp_path):
        cfg = _tiny_config(tmp_path, folds=2)
        paths = cmd_split(cfg)
        assert len(paths) == 2
        doc = json.load(open(paths[0]))
        train = set(doc["train_idx"])
        test = set(doc["test_idx"])
        assert not (train & test)
        assert len(train) + len(test) == 30 * 30

    def test_bench_writes_stage_table(self, tmp_path):
        cfg = _tiny_config(tmp_path, folds=1)
        path = cmd_bench(cfg)
        lines = open(path).read().strip().split("\n")
        assert lines[0] == "method,stage,seconds"
        stages = [ln.split(",")[1] for ln in lines[1:]]
        assert "scan" in stages and "total" in stages


class TestCli:
    def test_generate_and_run_exit_zero(self, tmp_path, capsys):
        out = str(tmp_path / "gen")
        assert main(["generate", "--dataset", "gaussian", "--n", "8",
                     "--m", "9", "--k", "2", "--seed", "5",
                     "--output", out]) == 0
        assert os.path.exists(os.path.join(out, "X.csv"))
        run_out = str(tmp_path / "run")
        code = main(["run", "--dataset", "planted", "--n", "30", "--m",
                     "30", "--k", "2", "--method", "wnmfk", "--k-min",
                     "2", "--k-max", "2", "--perturbations", "3",
                     "--folds", "1", "--test-sizes", "0.2",
                     "--max-iters", "50", "--output", run_out])
        assert code == 0
        captured = capsys.readouterr()
        assert "1 runs complete (0 failed)" in captured.out
        assert main(["eval", run_out]) == 0

    def test_flags_override_config_file(self, tmp_path):
        cfg_file = tmp_path / "cfg.txt"
        cfg_file.write_text("dataset=planted\nn=30\nm=30\nk_true=2\n"
                            "method=wnmfk\nk_min=3\nk_max=3\n"
                            "perturbations=3\nfolds=1\ntest_sizes=0.2\n"
                            "max_iters=50\n")
        out = str(tmp_path / "run")
        code = main(["run", "--config", str(cfg_file), "--k-min", "2",
                     "--k-max", "2", "--output", out])
        assert code == 0
        snapshot = open(os.path.join(out, "config.txt")).read()
        assert "k_min=2" in snapshot and "k_max=2" in snapshot
        assert "dataset=planted" in snapshot     # file value kept

    def test_error_json_on_stderr(self, tmp_path, capsys):
        code = main(["run", "--dataset", "planted", "--method", "bnmfk",
                     "--output", str(tmp_path / "x")])
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ValueError"
        assert "boolean_threshold" in err["message"]

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "mflink.cli", "generate", "--dataset",
             "dog", "--output", str(tmp_path)],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert os.path.exists(os.path.join(str(tmp_path), "X.csv"))
