import json

import numpy as np
import pytest

from streamlid.cli import EXIT_INVALID, EXIT_MODEL, main
from streamlid.confidence import ConfidenceModel
from streamlid.frontend import AudioSegment, write_wav
from streamlid.model_io import ModelContainer
from streamlid.pipeline import LangIdModel

CONFIG = """\
num_layers = 4
model_dim = 16
num_heads = 2
conv_span = 4
attention_left_context = 8
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "langs.txt").write_text("en\nde\nfr\n")
    (root / "model.cfg").write_text(CONFIG)
    assert main(["init-model", "--languages", str(root / "langs.txt"), "--config", str(root / "model.cfg"),
                 "--seed", "1", "--output", str(root / "model.bin")]) == 0
    rng = np.random.default_rng(0)
    lines = []
    for i in range(9):
        code = ["en", "de", "fr"][i % 3]
        freq = [300.0, 900.0, 2500.0][i % 3]
        t = np.arange(12000) / 16000
        audio = AudioSegment(0.3 * np.sin(2 * np.pi * freq * t) + rng.normal(0, 0.02, len(t)), 16000)
        write_wav(root / f"u{i}.wav", audio)
        assert main(["featurize", str(root / f"u{i}.wav"), "--output", str(root / f"u{i}.feat")]) == 0
        lines.append(f"u{i}.feat {code}")
    (root / "manifest.txt").write_text("\n".join(lines) + "\n")
    return root


def test_featurize_csv(workspace, capsys):
    out = workspace / "f.csv"
    assert main(["featurize", str(workspace / "u0.wav"), "--output", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert len(rows) == len(ModelContainer.load(workspace / "u0.feat").get("features"))
    first = rows[1].split(",")
    assert first[0] == "30" and len(first) == 513


def test_infer_is_byte_identical(workspace, capsys):
    args = ["infer", str(workspace / "u0.wav"), str(workspace / "u1.wav"), "--model", str(workspace / "model.bin")]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first
    recs = [json.loads(x) for x in first.splitlines()]
    assert {r["stream"] for r in recs} == {0, 1}
    assert set(recs[0]) == {"stream", "step", "time_ms", "posterior_top5", "adapted_top5", "confidence",
                            "switch_events"}


def test_training_workflow(workspace, capsys):
    w = workspace
    trained = w / "trained.bin"
    assert main(["train-head", "--model", str(w / "model.bin"), "--manifest", str(w / "manifest.txt"),
                 "--output", str(trained), "--loss-csv", str(w / "loss.csv")]) == 0
    loss = [float(x.split(",")[1]) for x in (w / "loss.csv").read_text().splitlines()[1:]]
    assert loss[-1] < loss[0]
    LangIdModel.load(trained)

    reg = w / "registry.json"
    assert main(["train-adaptation", "--model", str(trained), "--dev", str(w / "manifest.txt"),
                 "--domain", "studio", "--w-reg", "0.05", "--output", str(reg)]) == 0
    assert "studio" in json.loads(reg.read_text())["domains"]

    # the trained head is perfect on the manifest, so its correctness labels are degenerate
    capsys.readouterr()
    assert main(["train-confidence", "--model", str(trained), "--dev", str(w / "manifest.txt"),
                 "--output", str(w / "bad.txt")]) == EXIT_INVALID
    assert "single correctness label" in capsys.readouterr().err
    # relabel a third of it so correctness labels are mixed
    codes = ["en", "de", "fr"]
    dev = w / "dev.txt"
    dev.write_text("".join(f"u{i}.feat {codes[(i + (i >= 6)) % 3]}\n" for i in range(9)))
    conf = w / "conf.txt"
    rc = main(["train-confidence", "--model", str(trained), "--dev", str(dev),
               "--domain", "studio", "--registry", str(reg), "--output", str(conf)])
    assert rc == 0
    ConfidenceModel.load(conf)
    assert main(["train-confidence", "--model", str(trained), "--dev", str(dev), "--domain", "studio",
                 "--registry", str(reg), "--unadapted-confidence", "--output", str(w / "conf_raw.txt")]) == 0
    assert ConfidenceModel.load(w / "conf_raw.txt").to_text() != ConfidenceModel.load(conf).to_text()

    rc = main(["calibrate", "--model", str(trained), "--dev", str(dev), "--confidence", str(conf),
               "--rule", "max-fa", "--target-fa", "0.2", "--output", str(w / "conf2.txt")])
    assert rc == 0
    assert ConfidenceModel.load(w / "conf2.txt").threshold != ConfidenceModel.load(conf).threshold
    assert main(["eval", "--model", str(trained), "--manifest", str(w / "manifest.txt"), "--domain", "studio",
                 "--registry", str(reg), "--output", str(w / "results.csv")]) == 0
    text = (w / "results.csv").read_text()
    assert text.startswith("language,total,correct,accuracy") and "# average_accuracy=" in text
    assert main(["infer", str(w / "u2.wav"), "--model", str(trained), "--domain", "studio",
                 "--registry", str(reg), "--confidence", str(conf), "--latency"]) == 0
    assert "latency" in capsys.readouterr().err


def test_det_csv(workspace, tmp_path):
    w = workspace
    conf = tmp_path / "c.txt"
    ConfidenceModel(np.array([4.0, 2.0, 1.0, 0.0]), -2.0).save(conf)
    rc = main(["det-csv", "--model", str(w / "model.bin"), "--dev", str(w / "manifest.txt"),
               "--confidence", str(conf), "--output", str(tmp_path / "det.csv")])
    assert rc == 0
    rows = (tmp_path / "det.csv").read_text().splitlines()
    assert rows[0] == "threshold,fa,fr" and rows[-1].startswith("inf,0.0,1.0")


def test_flops(capsys):
    assert main(["flops", "--size", "small"]) == 0
    est = json.loads(capsys.readouterr().out)
    assert 0.225 <= est["gflop_per_second"] <= 0.9
    assert main(["flops", "--baseline", "lstm-small"]) == 0
    assert json.loads(capsys.readouterr().out)["gflop_per_second"] > 0


def test_exit_codes(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage!" * 10)
    assert main(["infer", str(workspace / "u0.wav"), "--model", str(bad)]) == EXIT_MODEL
    assert "model error" in capsys.readouterr().err
    truncated = tmp_path / "trunc.bin"
    truncated.write_bytes((workspace / "model.bin").read_bytes()[:-10])
    assert main(["infer", str(workspace / "u0.wav"), "--model", str(truncated)]) == EXIT_MODEL
    assert main(["infer", str(tmp_path / "missing.wav"), "--model", str(workspace / "model.bin")]) == EXIT_INVALID
    err = capsys.readouterr().err
    assert err.startswith("streamlid.")
    assert main(["featurize", str(workspace / "u0.wav")]) == EXIT_INVALID
    assert main(["init-model", "--languages", str(workspace / "langs.txt")]) == EXIT_INVALID
    (tmp_path / "m.txt").write_text("u0.feat xx\n")
    assert main(["eval", "--model", str(workspace / "model.bin"), "--manifest", str(tmp_path / "m.txt")]) \
        == EXIT_INVALID
    with pytest.raises(SystemExit):
        main(["no-such-command"])

