import json

import numpy as np
import pytest

from magface_lab import io
from magface_lab.cli import SEED_OFFSETS, derive_seeds, main
from magface_lab.toy import synthetic_identity_embeddings

SMALL_TRAIN = {"seed": 4, "data": {"n_classes": 4, "samples_per_class": 50}, "train": {"epochs": 8}}


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return path


def run(tmp_path, command, cfg, out="out", seed=None):
    cfg_path = write_config(tmp_path / f"{command}-{out}.json", cfg) if isinstance(cfg, dict) else cfg
    argv = [command, "--config", str(cfg_path), "--out", str(tmp_path / out)]
    if seed is not None:
        argv += ["--seed", str(seed)]
    return main(argv), tmp_path / out


def read_dir(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


class TestVerifyTheory:
    def test_default_config_passes(self, tmp_path):
        code, out = run(tmp_path, "verify-theory", {})
        assert code == 0
        rep = io.read_json(out / "certificates.json")
        assert rep["status"] == "passed"
        assert {s["property"] for s in rep["suites"]} == {"convexity", "unique_optimum", "monotonicity", "cap_probability"}
        assert all(s["configs_tested"] == 200 for s in rep["suites"] if s["property"] == "convexity")
        assert io.read_json(out / "meta.json")["config"]["params"]["lambda_g"] == 35.0

    def test_out_of_guarantee_is_skipped(self, tmp_path):
        code, out = run(tmp_path, "verify-theory", {"params": {"lambda_g": 0}})
        assert code == 0
        rep = io.read_json(out / "certificates.json")
        assert rep["status"] == "skipped" and rep["guarantees_hold"] is False

    def test_missing_file(self, tmp_path, capsys):
        code, _ = run(tmp_path, "verify-theory", tmp_path / "absent.json")
        assert code == 2
        assert "config" in capsys.readouterr().err

    @pytest.mark.parametrize("cfg, field", [
        ({"n_config": 3}, "n_config"),
        ({"n_configs": "many"}, "n_configs"),
        ({"params": {"s": -1}}, "params"),
        ({"params": {"scale": 2}}, "params.scale"),
        ({"variants": ["arcface"]}, "variants"),
        ({"seed": -1}, "seed"),
    ])
    def test_invalid_fields_are_named(self, tmp_path, capsys, cfg, field):
        code, _ = run(tmp_path, "verify-theory", cfg)
        assert code == 2
        assert field in capsys.readouterr().err

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert run(tmp_path, "verify-theory", path)[0] == 2


class TestTrain:
    def test_outputs_and_determinism(self, tmp_path):
        code_a, a = run(tmp_path, "train", SMALL_TRAIN, out="a")
        code_b, b = run(tmp_path, "train", SMALL_TRAIN, out="b")
        assert code_a == code_b == 0
        assert set(read_dir(a)) == {"meta.json", "model.bin", "model.json", "report.json", "samples.csv"}
        assert read_dir(a) == read_dir(b)
        report = io.read_json(a / "report.json")
        assert report["loss_history"][-1] < report["loss_history"][0]
        header = (a / "samples.csv").read_text().splitlines()[0]
        assert header == "sample_id,label,true_quality,magnitude,cos_theta"

    def test_seed_override(self, tmp_path):
        _, a = run(tmp_path, "train", SMALL_TRAIN, out="a")
        _, b = run(tmp_path, "train", SMALL_TRAIN, out="b", seed=9)
        meta = io.read_json(b / "meta.json")
        assert meta["seed"] == 9
        assert meta["config"]["train"]["seed"] == 9 + SEED_OFFSETS["train"]
        assert (a / "samples.csv").read_bytes() != (b / "samples.csv").read_bytes()

    @pytest.mark.parametrize("cfg, field", [
        ({"train": {"loss_variant": "sphereface"}}, "loss_variant"),
        ({"train": {"epochs": 2.5}}, "train.epochs"),
        ({"data": {"n_classes": 1}}, "data"),
        ({"data": {"classes": 3}}, "data.classes"),
        ({"train": {"loss_variant": "arcface", "params": {"s": 64}}}, "train.params"),
    ])
    def test_invalid(self, tmp_path, capsys, cfg, field):
        code, _ = run(tmp_path, "train", cfg)
        assert code == 2
        assert field in capsys.readouterr().err

    def test_fixed_margin_variant(self, tmp_path):
        cfg = {"data": {"n_classes": 3, "samples_per_class": 20},
               "train": {"epochs": 2, "loss_variant": "arcface", "params": {"s": 32, "m": 0.3}}}
        code, out = run(tmp_path, "train", cfg)
        assert code == 0
        assert io.read_json(out / "meta.json")["config"]["train"]["params"] == [32.0, 0.3]


def write_embeddings(tmp_path, E, y, q, name="emb.csv"):
    path = tmp_path / name
    io.write_embeddings_csv(path, E, y, q)
    return path


class TestEval:
    def test_from_train_run_is_idempotent(self, tmp_path):
        run(tmp_path, "train", SMALL_TRAIN, out="model")
        cfg = {"model_dir": str(tmp_path / "model")}
        code_a, a = run(tmp_path, "eval", cfg, out="ev_a")
        code_b, b = run(tmp_path, "eval", cfg, out="ev_b")
        assert code_a == code_b == 0
        files = read_dir(a)
        assert {"verification.json", "reject_curve.csv", "reject_curve.json", "aggregation.json",
                "clustering.json", "meta.json", "embeddings.csv", "eval_report.json"} <= set(files)
        assert files == read_dir(b)
        clustering = io.read_json(a / "clustering.json")
        assert [r["method"] for r in clustering["results"]] == ["kmeans", "ahc", "dbscan"]
        agg = io.read_json(a / "aggregation.json")
        assert agg["status"] == "ok" and 0 <= agg["magface_plus"]["tar"] <= 1

    def test_oracle_quality_curve_from_csv(self, tmp_path):
        rng = np.random.default_rng(0)
        centers = rng.standard_normal((10, 6))
        E, y, q = [], [], []
        for c in range(10):
            for j in range(6):
                bad = j == 0
                E.append(centers[c] + rng.standard_normal(6) * (3.0 if bad else 0.05))
                y.append(c)
                q.append(0.0 if bad else 1.0)
        path = write_embeddings(tmp_path, np.array(E), y, q)
        code, out = run(tmp_path, "eval", {"embeddings_csv": str(path), "quality_source": "csv",
                                           "reject_fractions": [0.0, 0.1, 0.2, 0.3]})
        assert code == 0
        _, fnmr, valid = io.read_reject_curve_csv(out / "reject_curve.csv")
        assert valid.all() and np.all(np.diff(fnmr) <= 0) and fnmr[-1] < fnmr[0]
        assert io.read_json(out / "reject_curve.json")["quality_source"] == "external"

    def test_constant_quality_curve_is_flat(self, tmp_path):
        E, y, _ = synthetic_identity_embeddings(10, 5, 6, 1.2, seed=0)
        path = write_embeddings(tmp_path, E, y, np.zeros(len(y)))
        code, out = run(tmp_path, "eval", {"embeddings_csv": str(path), "quality_source": "csv"})
        assert code == 0
        _, fnmr, valid = io.read_reject_curve_csv(out / "reject_curve.csv")
        assert np.all(fnmr[valid] == fnmr[0])

    def test_perfect_separation(self, tmp_path):
        E = np.repeat(np.eye(4), 3, axis=0) * 5.0
        y = np.repeat(np.arange(4), 3)
        path = write_embeddings(tmp_path, E, y, np.ones(12))
        code, out = run(tmp_path, "eval", {"embeddings_csv": "emb.csv", "far_targets": [0.1, 0.01, 0.001],
                                           "aggregation": {"template_size": 1}})
        assert code == 0
        table = io.read_json(out / "verification.json")["tar_at_far"]
        assert [row["tar"] for row in table] == [1.0, 1.0, 1.0]

    def test_no_impostor_pairs(self, tmp_path, capsys):
        path = write_embeddings(tmp_path, np.random.default_rng(0).standard_normal((5, 3)), [2] * 5, np.ones(5))
        code, _ = run(tmp_path, "eval", {"embeddings_csv": str(path)})
        assert code == 3
        assert "impostor" in capsys.readouterr().err

    @pytest.mark.parametrize("cfg, field", [
        ({}, "model_dir"),
        ({"embeddings_csv": "missing.csv"}, "embeddings_csv"),
        ({"model_dir": "nowhere"}, "model_dir"),
        ({"embeddings_csv": "x.csv", "reject_fractions": [0.3, 0.1]}, "reject_fractions"),
        ({"embeddings_csv": "x.csv", "quality_source": "oracle"}, "quality_source"),
        ({"embeddings_csv": "x.csv", "clustering": {"k": 0}}, "clustering.k"),
    ])
    def test_invalid(self, tmp_path, capsys, cfg, field):
        write_embeddings(tmp_path, np.eye(3), [0, 1, 1], np.ones(3), name="x.csv")
        code, _ = run(tmp_path, "eval", cfg)
        assert code == 2
        assert field in capsys.readouterr().err


def test_seed_derivation_uses_fixed_offsets():
    seeds = derive_seeds(5)
    assert seeds == {k: 5 + v for k, v in SEED_OFFSETS.items()}
    assert derive_seeds(2**64 - 1)["train"] == SEED_OFFSETS["train"] - 1
