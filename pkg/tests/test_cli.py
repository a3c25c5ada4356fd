import csv
import json

import numpy as np
import pytest

from physprior.checkpoint import load_checkpoint
from physprior.cli import main, resolve_threads, CommandError
from physprior.dataset import PVDReader, split_paths

SMALL = ["--n-traj", "4", "--traj-len", "14", "--height", "16", "--width", "16"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    report = json.loads(out.strip().splitlines()[-1]) if code == 0 else None
    return code, report, err


@pytest.fixture
def data(tmp_path, capsys):
    path = tmp_path / "d.pvd"
    code, report, _ = run(capsys, "gen-data", "--out", str(path), *SMALL, "--seed", "3")
    assert code == 0
    return path, report


def test_gen_data_report_and_config_echo(data):
    path, report = data
    (f,) = report["files"]
    assert f["path"] == str(path) and f["n_traj"] == 4 and len(f["sha256"]) == 64
    assert f["bytes"] == path.stat().st_size
    echoed = json.load(open(report["config"]))
    assert echoed["config"]["dataset"]["master_seed"] == 3 and echoed["command"] == "gen-data"


def test_gen_data_is_reproducible_and_thread_independent(tmp_path, capsys):
    a, b = tmp_path / "a.pvd", tmp_path / "b.pvd"
    _, ra, _ = run(capsys, "gen-data", "--out", str(a), *SMALL)
    _, rb, _ = run(capsys, "gen-data", "--out", str(b), *SMALL, "--threads", "2")
    assert ra["files"][0]["sha256"] == rb["files"][0]["sha256"]


def test_gen_data_split_and_variant(tmp_path, capsys):
    out = tmp_path / "s.pvd"
    code, report, _ = run(capsys, "gen-data", "--out", str(out), *SMALL, "--split", "3", "--variant", "large_scene")
    assert code == 0
    train, test = split_paths(out)
    assert [f["n_traj"] for f in report["files"]] == [3, 1]
    assert PVDReader(train).header.height == 168


def test_threads_resolution(monkeypatch):
    monkeypatch.delenv("PHYSPRIOR_THREADS", raising=False)
    assert resolve_threads(None) == 1
    monkeypatch.setenv("PHYSPRIOR_THREADS", "3")
    assert resolve_threads(None) == 3 and resolve_threads(2) == 2
    monkeypatch.setenv("PHYSPRIOR_THREADS", "many")
    with pytest.raises(CommandError):
        resolve_threads(None)
    with pytest.raises(CommandError):
        resolve_threads(0)


def test_predictor_train_eval_probe(tmp_path, capsys, data):
    path, _ = data
    ckpt = tmp_path / "p.pckp"
    code, report, _ = run(capsys, "train-predictor", "--data", str(path), "--out", str(ckpt), "--channels", "2",
                          "--max-steps", "2", "--bptt-len", "4", "--batch-size", "2")
    assert code == 0 and report["steps"] == 2 and report["evaluated_on"] == "train"
    assert any(k.startswith("spatialnet.") for k in load_checkpoint(ckpt))
    with open(report["loss_csv"]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "split", "metric", "value"] and len(rows) == 3

    dump = tmp_path / "dump"
    code, report, _ = run(capsys, "eval-predictor", "--ckpt", str(ckpt), "--data", str(path), "--horizons", "1", "5",
                          "--dump-frames", str(dump), "--n-dump", "1")
    assert code == 0 and set(report["mse"]) == {"1", "5"} and report["noise"] == 0
    assert (dump / "strip_000.ppm").exists() and (dump / "hidden_000.ppm").exists()

    code, noisy, _ = run(capsys, "eval-predictor", "--ckpt", str(ckpt), "--data", str(path), "--horizons", "1",
                         "--noise", "0.3")
    assert code == 0 and noisy["noise"] == 0.3

    code, report, _ = run(capsys, "probe", "--ckpt", str(ckpt), "--property", "drag", "--n-train", "2",
                          "--n-test", "2", "--clip-start", "4", "--size", "16")
    assert code == 0
    assert report["difference"] == pytest.approx(report["pretrained_accuracy"] - report["random_accuracy"])


def test_agent_train_and_eval(tmp_path, capsys):
    out = tmp_path / "agent"
    code, report, _ = run(capsys, "train-agent", "--predictor", "random", "--trivial", "--out", str(out),
                          "--frames", "16", "--k", "1", "--n-envs", "2", "--horizon", "8", "--channels", "2")
    assert code == 0 and report["frames"] == 16 and report["k"] == 1
    assert (out / "policy.pckp").exists() and (out / "predictor.pckp").exists() and (out / "metrics.csv").exists()
    code, report, _ = run(capsys, "eval-agent", "--policy", str(out / "policy.pckp"), "--predictor",
                          str(out / "predictor.pckp"), "--k", "1", "--trivial", "--episodes", "2")
    assert code == 0 and report["episodes"] == 2
    code, _, err = run(capsys, "eval-agent", "--policy", str(out / "policy.pckp"), "--k", "0", "--trivial",
                       "--episodes", "1")
    assert code == 1 and "channel mismatch" in err


@pytest.mark.parametrize("argv,needle", [
    (["eval-predictor", "--ckpt", "/nonexistent.pckp", "--data", "/nonexistent.pvd"], "cannot"),
    (["train-agent", "--predictor", "/nonexistent.pckp", "--out", "/tmp/x"], "does not exist"),
    (["gen-data", "--out", "/tmp/never.pvd", "--n-traj", "2", "--split", "5"], "split"),
])
def test_errors_exit_nonzero_with_message(capsys, argv, needle):
    code, _, err = run(capsys, *argv)
    assert code == 1 and needle in err and err.startswith("physprior ")


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": {"n_traj": 2, "bogus": 1}}))
    code, _, err = run(capsys, "gen-data", "--out", str(tmp_path / "x.pvd"), "--config", str(cfg))
    assert code == 1 and "bogus" in err


def test_config_file_values_are_used(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": {"n_traj": 2, "traj_len": 3, "height": 16, "width": 16}}))
    code, report, _ = run(capsys, "gen-data", "--out", str(tmp_path / "x.pvd"), "--config", str(cfg))
    assert code == 0 and report["files"][0]["n_traj"] == 2


def test_console_entry_point_help(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    assert "gen-data" in capsys.readouterr().out
