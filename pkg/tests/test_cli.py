import json
import pytest

from cli import main
from conftest import tiny_spec
from core import ops

TINY_FLAGS = ["--filters", "4", "--res-blocks", "2", "--code-dim", "3", "--hidden-dim", "6",
              "--epochs", "1", "--batch-size", "4", "--quiet"]


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv("TAGASC_OUT", str(tmp_path / "out"))
    return tmp_path / "out"


@pytest.fixture
def data(tmp_path, out):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(tiny_spec().to_dict()))
    assert main(["synth", "--spec", str(spec), "--quiet"]) == 0
    return out / "synth"


def test_gradcheck_ops(out, capsys):
    assert main(["gradcheck", "--scope", "ops"]) == 0
    assert "worst:" in capsys.readouterr().out


def test_gradcheck_reports_a_corrupted_backward(out, capsys, monkeypatch):
    original = ops.LeakyReLU.backward
    monkeypatch.setattr(ops.LeakyReLU, "backward", lambda self, grad: (2 * original(self, grad)[0],))
    assert main(["gradcheck", "--scope", "ops"]) == 1
    err = capsys.readouterr().err
    assert "CheckFailure" in err and "leaky_relu" in err


def test_synth_with_missing_spec(out, tmp_path):
    assert main(["synth", "--spec", str(tmp_path / "nope.json")]) == 2


def test_usage_errors(out, data):
    assert main(["train", "--data", str(data), "--fusion", "codecat", "--heads", "2"]) == 2
    assert main(["train", "--data", str(data), "--fusion", "attention", "--layers-att", "1"]) == 2
    assert main(["train", "--data", str(data), "--scale", "full", "--fusion", "attention",
                 "--heads", "3"]) == 2
    assert main(["grid", "--data", str(data)]) == 2
    assert main(["train"]) == 2


def test_missing_dataset(out, tmp_path):
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--quiet"]) == 3


def test_pipeline_ends_with_accuracy(out, data, capsys):
    assert main(["train", "--data", str(data), "--fusion", "attention", "--heads", "2",
                 "--layers", "1"] + TINY_FLAGS) == 0
    checkpoint = out / "train" / "model.ckpt"
    assert checkpoint.exists()
    assert main(["extract", "--checkpoint", str(checkpoint), "--data", str(data),
                 "--quiet"]) == 0
    assert main(["fit-svm", "--codes", str(out / "extract" / "codes_train.csv"), "--quiet"]) == 0
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(checkpoint), "--svm", str(out / "fit-svm" / "svm.txt"),
                 "--data", str(data)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-1].startswith("accuracy: ")
    assert 0.0 <= float(lines[-1].split()[1]) <= 100.0
    assert "confusion (rows: true, columns: predicted):" in lines
    assert len((out / "eval" / "predictions.csv").read_text().splitlines()) == 1 + 6


def test_reruns_are_byte_identical_and_manifest_appends(out, data):
    args = ["train", "--data", str(data), "--fusion", "codecat"] + TINY_FLAGS
    assert main(args + ["--out", str(out / "a")]) == 0
    assert main(args + ["--out", str(out / "b")]) == 0
    assert main(args + ["--out", str(out / "b")]) == 0
    for name in ("model.ckpt", "losses.json"):
        assert (out / "a" / name).read_bytes() == (out / "b" / name).read_bytes()
    runs = json.loads((out / "b" / "manifest.json").read_text())
    assert len(runs) == 2
    assert runs[0]["command"] == "train" and runs[0]["config"]["fusion"] == "codecat"
    assert runs[0]["seed"] == 0
    assert runs[0]["outputs"] == runs[1]["outputs"]


def test_synth_manifest_records_the_spec(out, data):
    runs = json.loads((data / "manifest.json").read_text())
    assert runs[0]["config"] == {**tiny_spec().to_dict(), "tagger": "file", "tag_noise": 0.1}
    assert str(data / "tags.txt") in runs[0]["outputs"]


def test_inspect_desk(out, capsys):
    assert main(["inspect"]) == 0
    text = capsys.readouterr().out
    assert "5436" in text.splitlines()[-2]
    assert text.splitlines()[-1] == "replay: ok"
    assert "block0.conv1" in text


def test_inspect_full_without_replay(out, capsys):
    assert main(["inspect", "--scale", "full", "--no-replay"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[-1].split() == ["total", "714058"]
    assert lines[0] == "input (479999, 2)"


def test_inspect_needs_events_for_tag_fusion(out):
    assert main(["inspect", "--fusion", "codecat"]) == 2


def test_synth_with_a_noisy_tagger(out, tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(tiny_spec().to_dict()))
    assert main(["synth", "--spec", str(spec), "--tagger", "noisy", "--tag-noise", "0.0",
                 "--out", str(out / "noisy"), "--quiet"]) == 0
    values = [line.split()[1:] for line in (out / "noisy" / "tags.txt").read_text().splitlines()]
    assert {v for row in values for v in row} <= {"0", "1", "0.0", "1.0"}
