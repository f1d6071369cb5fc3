"""End-to-end command tests over a small planted dataset."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from multilayer_gnn import cli


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Synth a dataset, shorten training, and produce one trained run."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert run("synth", "--out", data, "--n-genes", 120, "--n-layers", 2,
               "--n-features", 12, "--seed", 5) == 0
    cfg = json.loads((data / "config.json").read_text())
    cfg["training"]["epochs"] = 200
    cfg["output_dir"] = str(root / "run")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(cfg, indent=2))
    assert run("train", "--config", cfg_path) == 0
    return {
        "root": root,
        "data": data,
        "config": cfg_path,
        "cfg": cfg,
        "run": root / "run",
        "checkpoint": root / "run" / "checkpoint.bin",
        "truth": json.loads((data / "truth.json").read_text()),
    }


class TestSynth:
    def test_deterministic_files(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("synth", "--out", out, "--n-genes", 60, "--seed", 9) == 0
        for name in ("layer_L0.tsv", "layer_L1.tsv", "features.csv", "labels.tsv",
                     "gene_sets.gmt", "truth.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_zero_signal_documented_in_truth(self, tmp_path):
        assert run("synth", "--out", tmp_path / "z", "--n-genes", 60, "--seed", 1,
                   "--signal", 0.0) == 0
        truth = json.loads((tmp_path / "z" / "truth.json").read_text())
        assert truth["signal_strength"] == 0.0


class TestIngest:
    def test_summary(self, ws, tmp_path):
        assert run("ingest", "--config", ws["config"], "--out", tmp_path) == 0
        summary = json.loads((tmp_path / "dataset_summary.json").read_text())
        assert summary["n_genes"] == 120
        assert len(summary["layers"]) == 2
        assert summary["labels"]["unlabeled"] > 0

    def test_missing_feature_path_exit_1(self, ws, tmp_path, capsys):
        cfg = json.loads(ws["config"].read_text())
        cfg["paths"]["features"] = str(tmp_path / "nope.csv")
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(cfg))
        assert run("ingest", "--config", bad) == 1
        assert "paths.features" in capsys.readouterr().err

    def test_bad_json_exit_1(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run("ingest", "--config", bad) == 1

    def test_missing_seed_exit_1(self, ws, tmp_path, capsys):
        cfg = json.loads(ws["config"].read_text())
        del cfg["training"]["seed"]
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(cfg))
        assert run("train", "--config", bad) == 1
        assert "training.seed" in capsys.readouterr().err


class TestTrain:
    def test_outputs_present(self, ws):
        for name in ("checkpoint.bin", "report.json", "split.json",
                     "effective_config.json", "run.log"):
            assert (ws["run"] / name).exists()
        report = json.loads((ws["run"] / "report.json").read_text())
        assert len(report["train_loss"]) == 200
        assert "wall_clock_sec" not in report  # timing lives in run.log only

    def test_rerun_byte_identical(self, ws, tmp_path):
        out2 = tmp_path / "rerun"
        assert run("train", "--config", ws["config"], "--out", out2) == 0
        assert (out2 / "report.json").read_bytes() == (ws["run"] / "report.json").read_bytes()
        assert (out2 / "checkpoint.bin").read_bytes() == (ws["run"] / "checkpoint.bin").read_bytes()

    def test_divergence_exit_3(self, ws, tmp_path):
        cfg = json.loads(ws["config"].read_text())
        cfg["training"]["lr"] = 1e120
        cfg["training"]["epochs"] = 30
        cfg["output_dir"] = str(tmp_path / "div")
        bad = tmp_path / "div.json"
        bad.write_text(json.dumps(cfg))
        with np.errstate(over="ignore", invalid="ignore"):
            assert run("train", "--config", bad) == 3


class TestEvaluate:
    def test_matches_training_report(self, ws, tmp_path):
        out = tmp_path / "eval"
        assert run("evaluate", "--config", ws["config"], "--checkpoint", ws["checkpoint"],
                   "--split", ws["run"] / "split.json", "--out", out) == 0
        ev = json.loads((out / "evaluation.json").read_text())
        report = json.loads((ws["run"] / "report.json").read_text())
        assert ev["test_auprc"] == pytest.approx(report["test_auprc"], abs=1e-12)


class TestExplain:
    def test_meta_edges_cover_layers(self, ws, tmp_path):
        out = tmp_path / "exp"
        assert run("explain", "--config", ws["config"], "--checkpoint", ws["checkpoint"],
                   "--genes", "G0000", "--out", out) == 0
        rep = json.loads((out / "explain_G0000.json").read_text())
        assert set(rep["meta_edges"]) == {"L0", "L1"}
        assert rep["gene"] == "G0000"

    def test_unknown_gene_exit_2_with_hint(self, ws, tmp_path, capsys):
        assert run("explain", "--config", ws["config"], "--checkpoint", ws["checkpoint"],
                   "--genes", "G00O1", "--out", tmp_path / "x") == 2
        err = capsys.readouterr().err
        assert "closest matches" in err

    def test_explain_twice_identical(self, ws, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            assert run("explain", "--config", ws["config"], "--checkpoint",
                       ws["checkpoint"], "--genes", "G0002", "--out", out) == 0
            outs.append((out / "explain_G0002.json").read_bytes())
        assert outs[0] == outs[1]


class TestDiscover:
    def test_candidates_are_planted_positives(self, ws, tmp_path):
        out = tmp_path / "disc"
        assert run("discover", "--config", ws["config"], "--checkpoint",
                   ws["checkpoint"], "--out", out) == 0
        with open(out / "candidates.csv") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        got = {r[0] for r in rows[1:]}
        truth = ws["truth"]
        want = {g for g in truth["unlabeled"] if truth["positive"][g]}
        assert got == want
        full = (out / "unlabeled_ranking.csv").read_text().splitlines()
        assert len(full) - 1 == len(truth["unlabeled"])

    def test_threshold_override_echoed(self, ws, tmp_path):
        out = tmp_path / "disc2"
        assert run("discover", "--config", ws["config"], "--checkpoint",
                   ws["checkpoint"], "--threshold", 1.01, "--out", out) == 0
        text = (out / "candidates.csv").read_text()
        assert "threshold_override=true" in text
        with open(out / "candidates.csv") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        assert len(rows) == 1  # header only: no candidate clears 1.01


class TestGsea:
    def test_enrichment_on_ranking(self, ws, tmp_path):
        disc = tmp_path / "disc"
        assert run("discover", "--config", ws["config"], "--checkpoint",
                   ws["checkpoint"], "--out", disc) == 0
        out = tmp_path / "gsea"
        assert run("gsea", "--ranked", disc / "unlabeled_ranking.csv",
                   "--gene-sets", ws["data"] / "gene_sets.gmt",
                   "--permutations", 200, "--seed", 3, "--out", out) == 0
        text = (out / "enrichment.csv").read_text()
        assert text.startswith("set,es,")
        assert "PLANTED_POSITIVE" in text

    def test_same_seed_identical_csv(self, ws, tmp_path):
        disc = tmp_path / "disc"
        assert run("discover", "--config", ws["config"], "--checkpoint",
                   ws["checkpoint"], "--out", disc) == 0
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            assert run("gsea", "--ranked", disc / "unlabeled_ranking.csv",
                       "--gene-sets", ws["data"] / "gene_sets.gmt",
                       "--permutations", 100, "--seed", 7, "--out", out) == 0
            outs.append((out / "enrichment.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_zero_permutations_unavailable(self, ws, tmp_path):
        disc = tmp_path / "disc"
        assert run("discover", "--config", ws["config"], "--checkpoint",
                   ws["checkpoint"], "--out", disc) == 0
        out = tmp_path / "gsea0"
        assert run("gsea", "--ranked", disc / "unlabeled_ranking.csv",
                   "--gene-sets", ws["data"] / "gene_sets.gmt",
                   "--permutations", 0, "--out", out) == 0
        assert "unavailable" in (out / "enrichment.csv").read_text()

    def test_explain_json_as_ranking(self, ws, tmp_path):
        exp = tmp_path / "exp"
        assert run("explain", "--config", ws["config"], "--checkpoint",
                   ws["checkpoint"], "--genes", "G0000", "--out", exp) == 0
        out = tmp_path / "gsea_json"
        assert run("gsea", "--ranked", exp / "explain_G0000.json",
                   "--gene-sets", ws["data"] / "gene_sets.gmt",
                   "--permutations", 50, "--out", out) == 0
        assert (out / "enrichment.csv").exists()


class TestAblate:
    def test_edge_removal_zero_equals_baseline(self, ws, tmp_path):
        cfg = json.loads(ws["config"].read_text())
        cfg["training"]["epochs"] = 60
        cfg_path = tmp_path / "cfg.json"
        seed = cfg["training"]["seed"]
        cfg_path.write_text(json.dumps(cfg))
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run("ablate", "--config", cfg_path, "--mode", "none",
                   "--seeds", seed, "--out", out_a) == 0
        assert run("ablate", "--config", cfg_path, "--mode", "edge_removal",
                   "--fraction", 0.0, "--seeds", seed, "--out", out_b) == 0
        a = json.loads((out_a / "ablation_none.json").read_text())
        b = json.loads((out_b / "ablation_edge_removal.json").read_text())
        assert a["test_auprc"] == b["test_auprc"]

    def test_three_seeds_reported(self, ws, tmp_path):
        cfg = json.loads(ws["config"].read_text())
        cfg["training"]["epochs"] = 40
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "abl"
        assert run("ablate", "--config", cfg_path, "--mode", "all_one",
                   "--seeds", "1,2,3", "--out", out) == 0
        rep = json.loads((out / "ablation_all_one.json").read_text())
        assert len(rep["test_auprc"]) == 3
        assert "mean" in rep and "std" in rep

    def test_bad_mode_exit_1(self, ws):
        assert run("ablate", "--config", ws["config"], "--mode", "nonsense") == 1

    def test_config_section_supplies_defaults(self, ws, tmp_path):
        cfg = json.loads(ws["config"].read_text())
        cfg["training"]["epochs"] = 30
        cfg["ablation"] = {"mode": "all_one", "seeds": [4]}
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "abl"
        assert run("ablate", "--config", cfg_path, "--out", out) == 0
        rep = json.loads((out / "ablation_all_one.json").read_text())
        assert rep["seeds"] == [4]


class TestConfigValidation:
    def test_unknown_field_rejected(self, ws, tmp_path, capsys):
        cfg = json.loads(ws["config"].read_text())
        cfg["model"]["hiden_dim"] = 32  # typo must fail loudly
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(cfg))
        assert run("ingest", "--config", bad) == 1
        assert "model.hiden_dim" in capsys.readouterr().err

    def test_unknown_section_rejected(self, ws, tmp_path, capsys):
        cfg = json.loads(ws["config"].read_text())
        cfg["optimizer"] = {"lr": 0.1}
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(cfg))
        assert run("ingest", "--config", bad) == 1
        assert "optimizer" in capsys.readouterr().err


class TestUsage:
    def test_no_command_exit_1(self):
        assert run() == 1

    def test_unknown_flag_exit_1(self):
        assert run("train", "--nonexistent-flag") == 1
