import zipfile

import numpy as np
import pytest

from eegseq.checkpoint import load_checkpoint, save_checkpoint
from eegseq.errors import CheckpointError
from eegseq.models import FAMILIES, ModelConfig, build, shipped_config


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_bit_exact_round_trip(tmp_path, family, dtype):
    model = build(shipped_config(family), seed=3, dtype=dtype)
    for p in model.parameters():
        p.data = p.data + np.asarray(np.pi, dtype)
    save_checkpoint(model, tmp_path / "m.ckpt", extra={"note": "x"})
    back, header = load_checkpoint(tmp_path / "m.ckpt")
    assert header["extra"] == {"note": "x"} and header["seed"] == 3
    assert back.config == model.config and back.dtype == model.dtype
    a, b = model.state_dict(), back.state_dict()
    assert a.keys() == b.keys()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_identical_models_identical_bytes(tmp_path):
    cfg = ModelConfig("lstm", window_length=16, segments=4, lstm_hidden=(3,))
    save_checkpoint(build(cfg, 1), tmp_path / "a.ckpt")
    save_checkpoint(build(cfg, 1), tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_manifest_lists_parameters(tmp_path):
    model = build(ModelConfig("lstm", window_length=16, segments=4, lstm_hidden=(3,)))
    save_checkpoint(model, tmp_path / "m.ckpt")
    with zipfile.ZipFile(tmp_path / "m.ckpt") as zf:
        lines = zf.read("manifest.txt").decode().splitlines()
    names = [line.split("\t")[0] for line in lines]
    assert names == [n for n, _ in model.named_parameters()]
    assert lines[0].split("\t")[1:3] == ["float32", "3x7"]


@pytest.mark.parametrize("damage", ["truncate", "garbage", "missing"])
def test_corruption(tmp_path, damage):
    path = tmp_path / "m.ckpt"
    save_checkpoint(build(ModelConfig("lstm", window_length=16, segments=4, lstm_hidden=(3,))), path)
    raw = path.read_bytes()
    if damage == "truncate":
        path.write_bytes(raw[: len(raw) // 2])
    elif damage == "garbage":
        path.write_bytes(b"not a checkpoint")
    else:
        path = tmp_path / "absent.ckpt"
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_inconsistent_params(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(build(ModelConfig("lstm", window_length=16, segments=4, lstm_hidden=(3,))), path)
    with zipfile.ZipFile(path) as zf:
        members = {n: zf.read(n) for n in zf.namelist()}
    with zipfile.ZipFile(path, "w") as zf:
        for name, data in members.items():
            zf.writestr(name, data[:-8] if name == "params.bin" else data)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
