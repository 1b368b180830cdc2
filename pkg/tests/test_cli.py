"""Command-line interface: subcommands, artifacts, exit codes."""

import csv
import json

import numpy as np
import pytest

from bridgesampler.cli import EXIT_CONFIG, EXIT_OK, main


def write_config(tmp_path, **kw):
    base = dict(target="gmm8_2d", parameterization="CMCD", loss="rkl_ld",
                T=4, batch_size=16, iterations=2, lr=0.001, seed=0,
                eval_every=1, eval_samples=32, final_sample_metrics="false")
    base.update(kw)
    path = tmp_path / "run.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in base.items()))
    return path


class TestTrainCommand:
    def test_writes_artifacts_and_exits_zero(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = tmp_path / "run"
        code = main(["train", "--config", str(cfg), "--out", str(out),
                     "--quiet"])
        assert code == EXIT_OK
        assert (out / "manifest.json").exists()
        assert (out / "checkpoint.json").exists()
        assert "manifest written" in capsys.readouterr().out

    def test_bad_config_exits_three(self, tmp_path, capsys):
        cfg = write_config(tmp_path, loss="bogus")
        code = main(["train", "--config", str(cfg), "--quiet"])
        assert code == EXIT_CONFIG
        assert "error:" in capsys.readouterr().err

    def test_missing_config_exits_three(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "none.cfg"),
                     "--quiet"]) == EXIT_CONFIG


class TestEvalCommand:
    def test_prints_metric_rows(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = tmp_path / "run"
        main(["train", "--config", str(cfg), "--out", str(out), "--quiet"])
        capsys.readouterr()
        code = main(["eval", "--checkpoint", str(out / "checkpoint.json"),
                     "--samples", "32", "--seed", "1"])
        assert code == EXIT_OK
        rows = json.loads(capsys.readouterr().out)
        assert [r["metric"] for r in rows] == ["elbo", "sinkhorn", "mmd",
                                               "emc"]

    def test_target_mismatch_exits_three(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = tmp_path / "run"
        main(["train", "--config", str(cfg), "--out", str(out), "--quiet"])
        capsys.readouterr()
        code = main(["eval", "--checkpoint", str(out / "checkpoint.json"),
                     "--target", "funnel"])
        assert code == EXIT_CONFIG

    def test_corrupt_checkpoint_exits_three(self, tmp_path):
        bad = tmp_path / "ckpt.json"
        bad.write_text("{not json")
        assert main(["eval", "--checkpoint", str(bad)]) == EXIT_CONFIG


class TestSampleCommand:
    def test_writes_csv(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        out = tmp_path / "run"
        main(["train", "--config", str(cfg), "--out", str(out), "--quiet"])
        dest = tmp_path / "samples.csv"
        code = main(["sample", "--checkpoint", str(out / "checkpoint.json"),
                     "--n", "20", "--out", str(dest), "--seed", "3"])
        assert code == EXIT_OK
        with open(dest) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["x0", "x1"]
        data = np.asarray(rows[1:], dtype=float)
        assert data.shape == (20, 2)
        assert np.all(np.isfinite(data))


class TestDpiCommand:
    def test_reports_violation(self, capsys):
        code = main(["dpi"])
        assert code == EXIT_OK
        out = json.loads(capsys.readouterr().out)
        assert out["violates_variance_monotonicity"] is True
        assert out["kl_respects_monotonicity"] is True
        assert out["counterexample"]["gap"] == pytest.approx(-1.03994,
                                                             abs=1e-4)

    def test_search_included(self, capsys):
        code = main(["dpi", "--search", "500", "--seed", "1"])
        assert code == EXIT_OK
        out = json.loads(capsys.readouterr().out)
        assert out["search"]["trials"] == 500
        assert out["search"]["violations"] >= 1
        assert len(out["search"]["worst"]) >= 1


class TestGradcheckCommand:
    def test_enumeration_suite_passes(self, capsys):
        code = main(["gradcheck", "--suite", "enumeration"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "enumeration: PASS" in out
