"""CLI surface: determinism, config handling, exit codes, artifacts on disk."""

import os

import numpy as np
import pytest

from ricshield import cli, dataset, spectro
from ricshield.cli import main


def run(args):
    return main(args)


def tree_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in sorted(files):
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


@pytest.fixture(scope="module")
def tiny_plain(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("cli") / "plain")
    assert run(["gen-dataset", "--out", path, "--per-class", "4",
                "--capture-ms", "5", "--seed", "1"]) == 0
    return path


def test_gen_dataset_runs_twice_byte_identical(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    for out in (a, b):
        assert run(["gen-dataset", "--out", out, "--per-class", "1",
                    "--capture-ms", "5", "--seed", "9"]) == 0
    assert tree_bytes(a) == tree_bytes(b)


def test_encrypt_then_decrypt_round_trip(tiny_plain, tmp_path):
    enc = str(tmp_path / "enc")
    keys = str(tmp_path / "keys")
    back = str(tmp_path / "back")
    assert run(["encrypt", "--in", tiny_plain, "--out", enc, "--patch-size", "16",
                "--seed", "2", "--keys-out", keys]) == 0
    assert run(["decrypt", "--in", enc, "--out", back, "--keys", keys]) == 0
    plain_bytes = tree_bytes(tiny_plain)
    back_bytes = tree_bytes(back)
    for name, blob in plain_bytes.items():
        if name.endswith(".sgrm"):
            assert back_bytes[name] == blob


def test_train_overfit_then_eval_perfect(tiny_plain, tmp_path, capsys):
    enc = str(tmp_path / "enc")
    assert run(["encrypt", "--in", tiny_plain, "--out", enc, "--patch-size", "16",
                "--seed", "3"]) == 0
    ckpt = str(tmp_path / "vit.nnck")
    assert run(["train", "--model", "vit", "--data", enc, "--checkpoint-out", ckpt,
                "--fractions", "1,0,0", "--max-epochs", "150", "--seed", "4",
                "--early-stop-patience", "150", "--plateau-patience", "25",
                "--quiet"]) == 0
    assert os.path.exists(ckpt)
    assert os.path.exists(str(tmp_path / "vit_history.csv"))
    assert os.path.exists(str(tmp_path / "vit_history.png"))
    report = str(tmp_path / "report.csv")
    assert run(["eval", "--checkpoint", ckpt, "--data", enc, "--report", report,
                "--split", "all", "--fractions", "1,0,0", "--seed", "4"]) == 0
    lines = open(report).read().strip().splitlines()
    assert lines[0].startswith("Model,F1 Score,Accuracy,")
    fields = lines[1].split(",")
    assert fields[0] == "vit"
    assert float(fields[2]) == 1.0  # accuracy on the memorized samples
    assert os.path.exists(str(tmp_path / "report.png"))


def test_confidence_sweep_cli(tiny_plain, tmp_path):
    enc = str(tmp_path / "enc")
    assert run(["encrypt", "--in", tiny_plain, "--out", enc, "--patch-size", "16",
                "--seed", "5"]) == 0
    ckpt = str(tmp_path / "vit.nnck")
    assert run(["train", "--model", "vit", "--data", enc, "--checkpoint-out", ckpt,
                "--fractions", "1,0,0", "--max-epochs", "2", "--seed", "5",
                "--quiet"]) == 0
    out = str(tmp_path / "sweep.csv")
    assert run(["sweep", "--kind", "confidence", "--data", enc, "--out", out,
                "--checkpoint", ckpt, "--thresholds", "0,0.5,0.9",
                "--fractions", "0.5,0,0.5", "--seed", "5"]) == 0
    lines = open(out).read().strip().splitlines()
    assert lines[0] == "model,threshold,coverage,used,accuracy"
    assert len(lines) == 4
    assert os.path.exists(str(tmp_path / "sweep.png"))


def test_loop_all_with_checkpoint(tiny_plain, tmp_path):
    enc = str(tmp_path / "enc")
    assert run(["encrypt", "--in", tiny_plain, "--out", enc, "--patch-size", "16",
                "--seed", "6"]) == 0
    ckpt = str(tmp_path / "vit.nnck")
    assert run(["train", "--model", "vit", "--data", enc, "--checkpoint-out", ckpt,
                "--fractions", "1,0,0", "--max-epochs", "1", "--seed", "6",
                "--quiet"]) == 0
    scenario = tmp_path / "scen.txt"
    scenario.write_text("SOI 2\nCWI 1\n")
    report = str(tmp_path / "rtt.csv")
    assert run(["loop", "--role", "all", "--checkpoint", ckpt, "--scenario",
                str(scenario), "--interval", "0.3", "--report", report,
                "--seed", "6"]) == 0
    assert len(open(report).read().strip().splitlines()) == 1 + 10  # header + reports
    assert os.path.exists(str(tmp_path / "rtt.png"))


def test_loop_budget_violation_exit_code(tiny_plain, tmp_path):
    enc = str(tmp_path / "enc")
    run(["encrypt", "--in", tiny_plain, "--out", enc, "--patch-size", "16",
         "--seed", "7"])
    ckpt = str(tmp_path / "vit.nnck")
    run(["train", "--model", "vit", "--data", enc, "--checkpoint-out", ckpt,
         "--fractions", "1,0,0", "--max-epochs", "1", "--seed", "7", "--quiet"])
    scenario = tmp_path / "scen.txt"
    scenario.write_text("SOI 1\n")
    code = run(["loop", "--role", "all", "--checkpoint", ckpt, "--scenario",
                str(scenario), "--interval", "0.1", "--enforce-budget",
                "--budget-s", "0.000001", "--seed", "7"])
    assert code == cli.EXIT_BUDGET


def test_missing_data_dir_is_io_error(tmp_path):
    code = run(["eval", "--checkpoint", str(tmp_path / "nope.nnck"),
                "--data", str(tmp_path / "nope"), "--report", str(tmp_path / "r.csv")])
    assert code == cli.EXIT_IO


def test_config_file_merges_and_flags_win(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("per_class=2\nseed=3\ncapture_ms=5\n")
    out = str(tmp_path / "ds")
    assert run(["gen-dataset", "--out", out, "--config", str(cfg),
                "--per-class", "1"]) == 0
    manifest = dataset.load_manifest(out)
    assert manifest.per_class == 1  # flag overrides file
    assert manifest.seed == 3  # file fills the unset flag


def test_config_file_unknown_keys_listed_at_once(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("bogus=1\nalso_bad=2\nper_class=1\n")
    code = run(["gen-dataset", "--out", str(tmp_path / "x"), "--config", str(cfg)])
    assert code == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "also_bad" in err and "bogus" in err
    assert err.strip().count("\n") == 0  # single-line machine-parsable error


def test_unknown_flag_is_an_error():
    with pytest.raises(SystemExit) as exc:
        main(["gen-dataset", "--out", "x", "--nonsense", "1"])
    assert exc.value.code == 2


def test_help_lists_every_subcommand(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for sub in ("gen-dataset", "encrypt", "decrypt", "train", "eval", "sweep",
                "invariance", "loop"):
        assert sub in out


def test_resolved_config_logged(tmp_path, capsys):
    run(["gen-dataset", "--out", str(tmp_path / "ds"), "--per-class", "1",
         "--capture-ms", "5", "--seed", "8"])
    out = capsys.readouterr().out
    assert "config gen-dataset:" in out
    assert "per_class=1" in out and "seed=8" in out
