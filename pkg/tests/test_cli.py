import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from eegseq.checkpoint import load_checkpoint
from eegseq.cli import main
from eegseq.layers import MultiHeadAttention
from eegseq.models import export_qkv

TINY_LSTM = ["--family", "lstm", "--window-length", "100", "--set", "lstm_hidden=[4]"]
TINY_TRANSFORMER = [
    "--family", "transformer", "--window-length", "80", "--set", "d_model=8", "--set", "ff_dim=8",
]


def tiny_train(out, *extra):
    args = ["train", "--synth-per-class", "3", "--synth-channels", "2", "--synth-samples", "120",
            "--epochs", "3", "--seeds", "2", "--out", str(out)]
    return main(args + list(extra))


def read_matrix(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)


class TestSynth:
    def test_counts(self, tmp_path, capsys):
        assert main(["synth", "--per-class", "5", "--channels", "4", "--samples", "4000", "--seed", "7",
                     "--out", str(tmp_path)]) == 0
        assert len(list(tmp_path.glob("rec_*.csv"))) == 10
        assert (tmp_path / "manifest.csv").exists()
        assert "10 recordings" in capsys.readouterr().out

    def test_byte_identical(self, tmp_path):
        for d in ("a", "b"):
            main(["synth", "--per-class", "2", "--samples", "50", "--seed", "7", "--out", str(tmp_path / d)])
        for f in (tmp_path / "a").iterdir():
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_zero_per_class_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--per-class", "0", "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_unwritable(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["synth", "--per-class", "1", "--samples", "10", "--out", str(blocker / "sub")]) == 1
        assert "error" in capsys.readouterr().err


class TestTrain:
    def test_smoke_outputs(self, tmp_path):
        assert main(["train", "--synth-per-class", "3", "--synth-channels", "2", "--synth-samples", "120",
                     "--epochs", "1", "--seeds", "1", "--out", str(tmp_path)] + TINY_LSTM) == 0
        seed_dir = tmp_path / "lstm" / "0"
        for name in ("report.json", "curves.csv", "confusion.csv", "roc.csv", "scores.csv", "model.ckpt"):
            assert (seed_dir / name).exists(), name
        for name in ("aggregate.csv", "aggregate.txt", "resolved_config.json", "metadata.json", "lstm/report.json"):
            assert (tmp_path / name).exists(), name
        with open(seed_dir / "curves.csv") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["epoch", "train_loss", "val_loss", "train_acc", "val_acc"]
        assert len(rows) == 2

    def test_aggregate_columns(self, tmp_path):
        assert tiny_train(tmp_path, *TINY_LSTM) == 0
        with open(tmp_path / "aggregate.csv") as f:
            header, row = list(csv.reader(f))
        assert header[:2] == ["model", "n_seeds"] and len(header) == 2 + 12
        assert row[0] == "LSTM" and row[1] == "2"
        txt = (tmp_path / "aggregate.txt").read_text().splitlines()
        assert txt[0].split("\t") == ["Model", "Precision", "Accuracy", "F1", "Recall", "Specificity", "AUC"]
        assert txt[1].count("% ± ") == 6

    def test_deterministic_and_parallel(self, tmp_path):
        assert tiny_train(tmp_path / "a", *TINY_LSTM) == 0
        assert tiny_train(tmp_path / "b", *TINY_LSTM, "--jobs", "2") == 0
        for rel in ("aggregate.csv", "aggregate.txt", "lstm/report.json", "lstm/1/model.ckpt", "lstm/0/curves.csv"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel

    def test_config_file_and_precedence(self, tmp_path):
        cfg = tmp_path / "session.json"
        cfg.write_text(json.dumps({"epochs": 2, "seeds": [5], "model.lstm_hidden": [3], "task": "responder"}))
        assert tiny_train(tmp_path / "o", *TINY_LSTM, "--config", str(cfg)) == 0
        resolved = json.loads((tmp_path / "o" / "resolved_config.json").read_text())
        assert resolved["epochs"] == 3 and resolved["seeds"] == [0, 1]
        assert resolved["model"]["lstm_hidden"] == [4] and resolved["task"] == "responder"

    def test_validation_errors_enumerated(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"bogus": 1, "model.nope": 2}))
        code = main(["train", "--config", str(cfg), "--lr", "-1", "--family", "transformer", "--out", str(tmp_path)])
        err = capsys.readouterr().err
        assert code == 2
        for fragment in ("bogus", "model.nope", "data source", "lr"):
            assert fragment in err
        assert not (tmp_path / "transformer").exists()

    def test_manifest_source(self, tmp_path):
        main(["synth", "--per-class", "3", "--channels", "2", "--samples", "120", "--out", str(tmp_path / "d")])
        assert main(["train", "--manifest", str(tmp_path / "d" / "manifest.csv"), "--epochs", "2",
                     "--seed-list", "4,9", "--out", str(tmp_path / "o")] + TINY_LSTM) == 0
        assert sorted(p.name for p in (tmp_path / "o" / "lstm").iterdir() if p.is_dir()) == ["4", "9"]


class TestEval:
    def test_matches_training_report(self, tmp_path):
        tiny_train(tmp_path, *TINY_LSTM)
        assert main(["eval", "--checkpoint", str(tmp_path / "lstm/1/model.ckpt"),
                     "--manifest", str(tmp_path / "data/manifest.csv"), "--out", str(tmp_path / "ev")]) == 0
        trained = json.loads((tmp_path / "lstm/1/report.json").read_text())
        evaluated = json.loads((tmp_path / "ev/metrics.json").read_text())
        assert evaluated["metrics"] == trained["metrics"]
        assert evaluated["confusion"] == trained["confusion"]
        assert (tmp_path / "ev/scores.csv").read_bytes() == (tmp_path / "lstm/1/scores.csv").read_bytes()

    def test_window_mismatch(self, tmp_path, capsys):
        tiny_train(tmp_path, *TINY_LSTM)
        code = main(["eval", "--checkpoint", str(tmp_path / "lstm/0/model.ckpt"), "--window-length", "50",
                     "--manifest", str(tmp_path / "data/manifest.csv"), "--out", str(tmp_path / "ev")])
        err = capsys.readouterr().err
        assert code == 2 and "50" in err and "100" in err

    def test_corrupted_checkpoint(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"\x00" * 64)
        (tmp_path / "m.csv").write_text("path,subject_id,label,sampling_hz\n")
        assert main(["eval", "--checkpoint", str(bad), "--manifest", str(tmp_path / "m.csv"),
                     "--out", str(tmp_path / "ev")]) == 1

    def test_scored_stub_fixture(self, tmp_path, capsys):
        rows = ["score,label"] + ["0.9,1"] * 171 + ["0.7,0"] * 9 + ["0.1,0"] * 151
        (tmp_path / "s.csv").write_text("\n".join(rows) + "\n")
        assert main(["eval", "--scores", str(tmp_path / "s.csv"), "--out", str(tmp_path / "ev")]) == 0
        out = json.loads((tmp_path / "ev/metrics.json").read_text())
        assert out["confusion"] == {"tp": 171, "fp": 9, "tn": 151, "fn": 0}
        assert "tp=171 fp=9 tn=151 fn=0" in capsys.readouterr().out


class TestInspect:
    def test_exports_match_and_recompute(self, tmp_path):
        tiny_train(tmp_path, *TINY_TRANSFORMER)
        ckpt = tmp_path / "transformer/0/model.ckpt"
        assert main(["inspect", "--checkpoint", str(ckpt), "--manifest", str(tmp_path / "data/manifest.csv"),
                     "--index", "2", "--out", str(tmp_path / "ins")]) == 0
        model, _ = load_checkpoint(ckpt)
        attn: MultiHeadAttention = model.blocks[0].attn
        X = read_matrix(tmp_path / "ins/block0_input.csv")
        for h in range(4):
            Q = read_matrix(tmp_path / f"ins/block0_head{h}_Q.csv")
            A = read_matrix(tmp_path / f"ins/block0_head{h}_A.csv")
            cols = slice(2 * h, 2 * h + 2)
            np.testing.assert_allclose(Q, X @ attn.W_Q.data[:, cols].astype(np.float64), rtol=1e-5, atol=1e-5)
            assert A.shape == (40, 40)
            assert np.max(np.abs(A.sum(axis=1) - 1)) <= 1e-6

    def test_window_file_and_single_segment(self, tmp_path):
        tiny_train(tmp_path, *TINY_TRANSFORMER, "--set", "segments=1")
        window = np.random.default_rng(0).standard_normal(80).astype(np.float32)
        (tmp_path / "w.csv").write_text(",".join(str(v) for v in window) + "\n")
        ckpt = tmp_path / "transformer/0/model.ckpt"
        assert main(["inspect", "--checkpoint", str(ckpt), "--window", str(tmp_path / "w.csv"),
                     "--out", str(tmp_path / "ins")]) == 0
        assert (tmp_path / "ins/block0_head0_A.csv").read_text().strip() == "1.0"
        model, _ = load_checkpoint(ckpt)
        expected = export_qkv(model, window)[1].V
        np.testing.assert_array_equal(read_matrix(tmp_path / "ins/block0_head1_V.csv"), expected.astype(np.float64))

    def test_non_transformer(self, tmp_path, capsys):
        tiny_train(tmp_path, *TINY_LSTM)
        code = main(["inspect", "--checkpoint", str(tmp_path / "lstm/0/model.ckpt"),
                     "--manifest", str(tmp_path / "data/manifest.csv"), "--out", str(tmp_path / "ins")])
        assert code == 2 and "transformer" in capsys.readouterr().err


def test_count_params(capsys):
    assert main(["count-params"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5 and all(line.endswith("yes") for line in lines[1:])


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "eegseq.cli", "count-params", "--family", "lstm"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "LSTM\t35282" in proc.stdout
