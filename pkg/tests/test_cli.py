"""End-to-end command-line behavior: option layering, dataset
generation, the analysis subcommands, exit codes, and rerun
reproducibility.  Everything drives main() in-process."""

import hashlib
import os
from pathlib import Path

import pytest

from irispad.cli import (
    ENV_OUT,
    UsageError,
    main,
    parse_config_file,
    resolve_options,
)
from irispad.synthdata import read_manifest

TINY_MODEL_FLAGS = [
    "--input-size", "16",
    "--stem-filters", "4",
    "--growth-rate", "2",
    "--block-layers", "1,1",
]


def run(*argv):
    return main(list(argv))


def tree_digest(root):
    """Content hash of images and CSVs; run_config.txt stays out because
    it echoes the absolute --out path."""
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file() and p.name != "run_config.txt":
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One generated dataset plus a short-trained checkpoint, shared by
    the analysis-command smoke tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    rc = run(
        "gen-data", "--out", str(data),
        "--train", "12", "--test", "6", "--seed", "17", "--gen-size", "48",
    )
    assert rc == 0
    runs = root / "run"
    rc = run(
        "train", "--out", str(runs), "--data", str(data / "train"),
        *TINY_MODEL_FLAGS,
        "--lr", "0.02", "--batch-size", "4", "--epochs", "30", "--seed", "3",
    )
    assert rc == 0
    return {"data": data, "ckpt": runs / "model.ckpt", "root": root}


class TestGenData:
    def test_counts_and_layout(self, tmp_path):
        out = tmp_path / "ds"
        assert run("gen-data", "--out", str(out), "--train", "6", "--test", "6", "--seed", "5") == 0
        rows = read_manifest(out / "manifest.csv")
        assert len(rows) == 12
        assert sum(1 for r in rows if r["split"] == "train") == 6
        labels = [r["label"] for r in rows if r["split"] == "train"]
        assert labels.count("bonafide") == 3
        assert (out / "run_config.txt").exists()
        # relative manifest paths resolve inside the tree
        for r in rows:
            assert (out / r["path"]).is_file()

    def test_refuses_overwrite_without_force(self, tmp_path):
        out = tmp_path / "ds"
        assert run("gen-data", "--out", str(out), "--train", "2", "--test", "0") == 0
        assert run("gen-data", "--out", str(out), "--train", "2", "--test", "0") == 2
        assert run("gen-data", "--out", str(out), "--train", "2", "--test", "0", "--force") == 0

    def test_rerun_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run("gen-data", "--out", str(out), "--train", "4", "--test", "2", "--seed", "9") == 0
        assert tree_digest(a) == tree_digest(b)

    def test_empty_dataset_ok(self, tmp_path):
        out = tmp_path / "ds"
        assert run("gen-data", "--out", str(out), "--train", "0", "--test", "0") == 0
        rows = read_manifest(out / "manifest.csv")
        assert rows == []

    def test_train_and_test_seeds_disjoint(self, tmp_path):
        out = tmp_path / "ds"
        assert run("gen-data", "--out", str(out), "--train", "4", "--test", "4", "--seed", "100") == 0
        rows = read_manifest(out / "manifest.csv")
        train_names = {Path(r["path"]).name for r in rows if r["split"] == "train"}
        test_names = {Path(r["path"]).name for r in rows if r["split"] == "test"}
        # seed is embedded in the filename, so disjoint seeds -> disjoint names
        assert not (train_names & test_names)


class TestOptionLayering:
    def test_config_file_overrides_defaults(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("# comment\ntrain = 7\ngen_size = 48\n")
        ns = build_ns("gen-data", config=str(cfg))
        eff = resolve_options("gen-data", ns)
        assert eff["train"] == 7
        assert eff["gen-size"] == 48
        assert eff["test"] == 400  # untouched default

    def test_flags_override_config_file(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("train = 7\n")
        ns = build_ns("gen-data", config=str(cfg), train="3")
        eff = resolve_options("gen-data", ns)
        assert eff["train"] == 3

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("bogus = 1\n")
        with pytest.raises(UsageError):
            resolve_options("gen-data", build_ns("gen-data", config=str(cfg)))

    def test_malformed_config_line(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("no equals sign\n")
        with pytest.raises(UsageError):
            parse_config_file(cfg)

    def test_missing_config_file(self):
        with pytest.raises(UsageError):
            parse_config_file("/nonexistent/c.cfg")

    def test_bad_flag_value_exit_2(self, tmp_path, capsys):
        rc = run("gen-data", "--out", str(tmp_path), "--train", "many")
        assert rc == 2
        assert "error: usage:" in capsys.readouterr().err

    def test_run_config_echo(self, tmp_path):
        out = tmp_path / "ds"
        assert run("gen-data", "--out", str(out), "--train", "2", "--test", "0", "--seed", "8") == 0
        text = (out / "run_config.txt").read_text()
        assert "command = gen-data" in text
        assert "train = 2" in text
        assert "seed = 8" in text


class TestOutputDir:
    def test_env_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv(ENV_OUT, str(tmp_path / "envout"))
        assert run("gen-data", "--train", "2", "--test", "0") == 0
        assert (tmp_path / "envout" / "manifest.csv").exists()

    def test_no_out_anywhere(self, monkeypatch, capsys):
        monkeypatch.delenv(ENV_OUT, raising=False)
        rc = run("gen-data", "--train", "2", "--test", "0")
        assert rc == 2
        assert "error: usage:" in capsys.readouterr().err

    def test_flag_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(ENV_OUT, str(tmp_path / "envout"))
        out = tmp_path / "flagout"
        assert run("gen-data", "--out", str(out), "--train", "2", "--test", "0") == 0
        assert (out / "manifest.csv").exists()
        assert not (tmp_path / "envout").exists()


class TestTrainCommand:
    def test_artifacts(self, workspace):
        run_dir = workspace["ckpt"].parent
        assert workspace["ckpt"].exists()
        assert (run_dir / "train_log.csv").exists()
        assert (run_dir / "train_timing.txt").exists()
        assert (run_dir / "run_config.txt").exists()

    def test_missing_data_exit_2(self, tmp_path, capsys):
        rc = run("train", "--out", str(tmp_path / "r"))
        assert rc == 2
        assert "error: usage:" in capsys.readouterr().err

    def test_bad_hyperparameter_exit_2(self, workspace, tmp_path):
        rc = run(
            "train", "--out", str(tmp_path / "r"), "--data", str(workspace["data"] / "train"),
            *TINY_MODEL_FLAGS, "--momentum", "1.5", "--epochs", "1",
        )
        assert rc == 2


class TestEvalCommand:
    def test_report_artifacts(self, workspace, tmp_path, capsys):
        out = tmp_path / "eval"
        rc = run(
            "eval", "--out", str(out), "--checkpoint", str(workspace["ckpt"]),
            "--data", str(workspace["data"] / "test"), "--fdr", "0.1",
        )
        assert rc == 0
        report = dict(
            line.split(",", 1) for line in (out / "report.csv").read_text().splitlines()[1:]
        )
        assert "threshold" in report and "tdr" in report
        assert 0.0 <= float(report["tdr"]) <= 1.0
        scores = (out / "scores.csv").read_text().splitlines()
        assert scores[0] == "path_or_seed,class,label,score"
        assert len(scores) == 7  # header + 6 test images
        assert (out / "roc.csv").exists()
        assert (out / "histogram.pgm").exists()
        assert "TDR" in capsys.readouterr().out

    def test_rerun_byte_identical(self, workspace, tmp_path):
        outs = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            rc = run(
                "eval", "--out", str(out), "--checkpoint", str(workspace["ckpt"]),
                "--data", str(workspace["data"] / "test"), "--fdr", "0.1", "--jobs", "2",
            )
            assert rc == 0
            outs.append(out)
        for f in ("scores.csv", "report.csv", "roc.csv"):
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()

    def test_missing_checkpoint_exit_2(self, workspace, tmp_path):
        rc = run(
            "eval", "--out", str(tmp_path / "e"), "--checkpoint", str(tmp_path / "nope.ckpt"),
            "--data", str(workspace["data"] / "test"),
        )
        assert rc == 2

    def test_corrupt_checkpoint_exit_1(self, workspace, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"not a checkpoint at all")
        rc = run(
            "eval", "--out", str(tmp_path / "e"), "--checkpoint", str(bad),
            "--data", str(workspace["data"] / "test"),
        )
        assert rc == 1
        assert "error: runtime:" in capsys.readouterr().err


class TestGradcamCommand:
    def test_average_per_class(self, workspace, tmp_path):
        out = tmp_path / "cam"
        rc = run(
            "gradcam", "--out", str(out), "--checkpoint", str(workspace["ckpt"]),
            "--data", str(workspace["data"] / "test"), "--average",
        )
        assert rc == 0
        # test split of 6 covers all four classes per the fixed mix
        for cls in ("bonafide", "print", "artificial_eye", "cosmetic_contact"):
            assert (out / f"gradcam_avg_{cls}.pgm").exists()
            assert (out / f"gradcam_avg_{cls}.ppm").exists()

    def test_per_image_capped(self, workspace, tmp_path):
        out = tmp_path / "cam"
        rc = run(
            "gradcam", "--out", str(out), "--checkpoint", str(workspace["ckpt"]),
            "--data", str(workspace["data"] / "test"), "--class", "bonafide",
            "--max-images", "2", "--jobs", "2",
        )
        assert rc == 0
        pgms = sorted(out.glob("gradcam_bonafide_*.pgm"))
        assert len(pgms) == 2

    def test_unknown_class_exit_2(self, workspace, tmp_path):
        rc = run(
            "gradcam", "--out", str(tmp_path / "c"), "--checkpoint", str(workspace["ckpt"]),
            "--data", str(workspace["data"] / "test"), "--class", "wax",
        )
        assert rc == 2


class TestTsneCommand:
    def test_block_csvs(self, workspace, tmp_path):
        out = tmp_path / "emb"
        rc = run(
            "tsne", "--out", str(out), "--checkpoint", str(workspace["ckpt"]),
            "--data", str(workspace["data"] / "train"), "--blocks", "0,1",
            "--perplexity", "3", "--iters", "30",
        )
        assert rc == 0
        for b in (0, 1):
            lines = (out / f"tsne_block{b}.csv").read_text().splitlines()
            assert lines[0] == "x,y,label,block"
            assert len(lines) == 13  # 12 train samples
        params = (out / "tsne_params.txt").read_text()
        assert "perplexity = 3" in params

    def test_perplexity_too_large_exit_1(self, workspace, tmp_path):
        rc = run(
            "tsne", "--out", str(tmp_path / "e"), "--checkpoint", str(workspace["ckpt"]),
            "--data", str(workspace["data"] / "train"), "--blocks", "0",
            "--perplexity", "30", "--iters", "10",
        )
        assert rc == 1


class TestFreqCommands:
    def test_sweep_rows(self, workspace, tmp_path):
        out = tmp_path / "sw"
        rc = run(
            "freq-sweep", "--out", str(out), "--checkpoint", str(workspace["ckpt"]),
            "--data", str(workspace["data"] / "test"), "--cutoffs", "2,5", "--fdr", "0.2",
        )
        assert rc == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert len(lines) == 3
        assert (out / "panel.pgm").exists()

    def test_default_cutoffs_include_identity(self, workspace, tmp_path):
        out = tmp_path / "sw"
        rc = run(
            "freq-sweep", "--out", str(out), "--checkpoint", str(workspace["ckpt"]),
            "--data", str(workspace["data"] / "test"), "--fdr", "0.2",
        )
        assert rc == 0
        lines = (out / "sweep.csv").read_text().splitlines()[1:]
        # 16x16 input: scaled cutoffs 1,2,4 plus the identity endpoint 12
        cuts = [int(l.split(",")[0]) for l in lines]
        assert cuts == [1, 2, 4, 12]
        last_tdr, baseline = lines[-1].split(",")[1:3]
        assert last_tdr == baseline

    def test_robustness_rows(self, workspace, tmp_path):
        out = tmp_path / "rb"
        rc = run(
            "robustness", "--out", str(out), "--checkpoint", str(workspace["ckpt"]),
            "--data", str(workspace["data"] / "test"), "--fdr", "0.2",
        )
        if rc == 1:
            pytest.skip("untrained-quality checkpoint scored zero baseline TDR")
        lines = (out / "robustness.csv").read_text().splitlines()
        assert lines[0] == "name,tdr,relative_decrease_pct"
        assert len(lines) == 7


class TestParserSurface:
    def test_no_command_exit_2(self, capsys):
        assert main([]) == 2
        assert "command" in capsys.readouterr().out

    @pytest.mark.parametrize(
        "cmd", ["gen-data", "train", "eval", "gradcam", "tsne", "freq-sweep", "robustness"]
    )
    def test_help_lists_defaults(self, cmd, capsys):
        with pytest.raises(SystemExit) as e:
            main([cmd, "--help"])
        assert e.value.code == 0
        text = capsys.readouterr().out
        assert "--out" in text
        assert "default" in text

    def test_unknown_flag_exit_2(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["gen-data", "--frobnicate", "1"])
        assert e.value.code == 2


def build_ns(cmd, **kw):
    import argparse

    ns = argparse.Namespace(command=cmd)
    for k, v in kw.items():
        setattr(ns, k, v)
    return ns
