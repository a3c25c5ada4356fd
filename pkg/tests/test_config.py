import json

import numpy as np
import pytest

from physprior.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from physprior.config import RunConfig
from physprior.metrics import MetricsLog, read_metrics


def test_defaults_validate_and_roundtrip(tmp_path):
    cfg = RunConfig()
    cfg.validate()
    path = tmp_path / "c.json"
    cfg.write(path, note="x")
    doc = json.load(open(path))
    assert doc["note"] == "x"
    assert RunConfig.from_dict(doc["config"]).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("doc,needle", [
    ({"nope": {}}, "sections"),
    ({"predictor": {"depth": 3}}, "depth"),
    ({"agent": {"ppo": {"clip_eps": 2.0}}}, "clip"),
    ({"env": {"game": "pong"}}, "pong"),
    ({"dataset": []}, "object"),
])
def test_invalid_configs(doc, needle):
    with pytest.raises(ValueError, match=needle):
        RunConfig.from_dict(doc)


def test_load_missing_and_malformed(tmp_path):
    assert RunConfig.load(None).predictor.arch == "spatialnet"
    with pytest.raises(ValueError, match="cannot read"):
        RunConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ValueError, match="cannot read"):
        RunConfig.load(bad)


def test_override_skips_none():
    cfg = RunConfig().override("predictor", lr=None, channels=8)
    assert cfg.predictor.channels == 8 and cfg.predictor.lr == 1e-4
    with pytest.raises(ValueError):
        cfg.override("predictor", depth=2)


def test_checkpoint_roundtrip_with_scalars(tmp_path):
    path = tmp_path / "c.pckp"
    tensors = {"w": np.arange(6, dtype=np.float32).reshape(2, 3), "t": np.asarray(5.0, np.float32),
               "d": np.linspace(0, 1, 4)}
    save_checkpoint(path, tensors)
    back = load_checkpoint(path)
    assert list(back) == ["w", "t", "d"]
    assert back["t"].shape == () and back["d"].dtype == np.float64
    for k in tensors:
        assert back[k].tobytes() == np.asarray(tensors[k]).tobytes()


def test_checkpoint_layout(tmp_path):
    path = tmp_path / "c.pckp"
    save_checkpoint(path, {"ab": np.array([1.5], np.float32)})
    raw = path.read_bytes()
    assert raw[:4] == b"PCKP"
    assert raw[4:12] == (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
    assert raw[12:18] == (2).to_bytes(4, "little") + b"ab"
    assert raw[18:26] == (1).to_bytes(4, "little") + (1).to_bytes(4, "little")
    assert raw[26] == 0 and raw[27:] == np.float32(1.5).tobytes()


@pytest.mark.parametrize("mutate,needle", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + (2).to_bytes(4, "little") + b[8:], "version"),
    (lambda b: b[:-2], "truncated"),
    (lambda b: b[:26] + b"\x07" + b[27:], "dtype"),
])
def test_checkpoint_corruption(tmp_path, mutate, needle):
    path = tmp_path / "c.pckp"
    save_checkpoint(path, {"ab": np.array([1.5], np.float32)})
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(CheckpointError, match=needle):
        load_checkpoint(path)


def test_metrics_log_csv(tmp_path):
    path = tmp_path / "m.csv"
    with MetricsLog(path) as log:
        log.log(1, "train", "loss", 0.5)
        log.log(2, "test", "mse_1", 0.25)
    assert log.values("loss") == [0.5]
    rows = read_metrics(path)
    assert len(rows) == 2
