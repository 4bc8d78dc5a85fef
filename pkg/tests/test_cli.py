import json

import pytest

from fedprint import experiment
from fedprint.cli import main

SMALL_INI = """\
[corpus]
num_clients = 10
feature_dim = 8
num_classes = 4
frames_min = 60
frames_max = 120
analysis_threshold = 90
analysis_size = 20
enroll_frames = 30
eval_frames = 40
indicator_utterances = 3
indicator_frames = 5

[model]
hidden_dims = 8, 8

[federation]
clients_per_round = 3
rounds = {rounds}

[train]
epochs = 1
batch_size = 16

[attack]
enrollment_speakers = 4
enrollment_frames = 30
rounds = {attack_rounds}
layers = 1, 2

[report]
tracked_round = 2
tracked_speakers = 3
"""


def write_cfg(tmp_path, rounds=5, attack_rounds="3, 5", name="cfg.ini"):
    path = tmp_path / name
    path.write_text(SMALL_INI.format(rounds=rounds, attack_rounds=attack_rounds))
    return str(path)


@pytest.fixture
def pipeline(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    return cfg, out


def test_generate_twice_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    blob = (tmp_path / "a" / "corpus.bin").read_bytes()
    man = (tmp_path / "a" / "manifest.json").read_text()
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert (tmp_path / "a" / "corpus.bin").read_bytes() == blob
    assert (tmp_path / "a" / "manifest.json").read_text() == man


def test_default_manifest_has_60_clients(tmp_path):
    assert main(["generate", "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "manifest.json").read_text())
    assert sum(s["split"] == "client" for s in meta["speakers"]) == 60


def test_missing_config(tmp_path, capsys):
    assert main(["generate", "--config", str(tmp_path / "absent.ini"), "--out", str(tmp_path)]) == 2
    assert "absent.ini" in capsys.readouterr().err


def test_no_output_dir(capsys):
    assert main(["generate"]) == 2


def test_train_single_round(tmp_path):
    cfg = write_cfg(tmp_path, rounds=1, attack_rounds="1")
    out = tmp_path / "o"
    assert main(["generate", "--config", cfg, "--out", str(out)]) == 0
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    assert sorted(p.name for p in (out / "snapshots").iterdir()) == ["round_1.bin"]
    assert len(experiment.read_csv(out / "rounds.csv")) == 1


def test_train_without_corpus(tmp_path):
    assert main(["train", "--config", write_cfg(tmp_path), "--out", str(tmp_path / "empty")]) == 3


def test_refuses_overwrite(pipeline, capsys):
    cfg, out = pipeline
    before = (out / "rounds.csv").read_bytes()
    assert main(["train", "--config", cfg, "--out", str(out)]) == 3
    assert "--force" in capsys.readouterr().err
    assert main(["train", "--config", cfg, "--out", str(out), "--force"]) == 0
    assert (out / "rounds.csv").read_bytes() == before


def test_config_corpus_mismatch(pipeline, tmp_path):
    _, out = pipeline
    assert main(["train", "--out", str(out), "--seed", "5", "--force"]) == 2


def test_config_reused_from_out_dir(pipeline):
    _, out = pipeline
    assert main(["attack", "--out", str(out)]) == 0


def test_attack_outputs(pipeline):
    _, out = pipeline
    rows = experiment.read_csv(out / "eer.csv")
    assert [(r["round"], r["layer"]) for r in rows] == [("3", "1"), ("3", "2"), ("5", "1"), ("5", "2")]
    assert (out / "eer.csv").read_text().startswith("# P_miss")
    trials = experiment.read_csv(out / "trials.csv")
    assert len(trials) == 2 * 2 * 4 * 3
    by_layer = experiment.read_csv(out / "eer_by_layer.csv")
    for row in by_layer:
        vals = [float(r["eer"]) for r in rows if r["layer"] == row["layer"]]
        assert float(row["mean_eer"]) == pytest.approx(sum(vals) / len(vals), rel=1e-8)


def test_attack_round_not_stored(pipeline, tmp_path, capsys):
    _, out = pipeline
    cfg = write_cfg(tmp_path, attack_rounds="3, 4", name="other.ini")
    assert main(["attack", "--config", cfg, "--out", str(out)]) == 4
    assert "[4]" in capsys.readouterr().err


def test_attack_no_round_available(pipeline, tmp_path):
    _, out = pipeline
    cfg = write_cfg(tmp_path, attack_rounds="2, 4", name="other.ini")
    assert main(["attack", "--config", cfg, "--out", str(out)]) == 4


def test_default_cross_product(tmp_path):
    cfg = write_cfg(tmp_path, rounds=30, attack_rounds="3, 5, 10, 20, 30")
    text = open(cfg).read().replace("layers = 1, 2", "layers = 1, 2, 3, 4, 5, 6")
    text = text.replace("hidden_dims = 8, 8", "hidden_dims = 8, 8, 8, 8, 8, 8")
    open(cfg, "w").write(text)
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    assert len(experiment.read_csv(out / "eer.csv")) == 30


def test_report_empty_dir(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path)]) == 3
    err = capsys.readouterr().err
    for name in ("config.ini", "rounds.csv", "eer.csv"):
        assert name in err


def test_report_contents(pipeline, capsys):
    _, out = pipeline
    assert main(["report", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    best = int(next(l for l in text.splitlines() if l.startswith("best round")).split(":")[1])
    assert 1 <= best <= 5
    rows = experiment.read_csv(out / "eer.csv")
    layers = sorted({int(r["layer"]) for r in rows})
    means = [sum(float(r["eer"]) for r in rows if int(r["layer"]) == h) / 2 for h in layers]
    direction, _ = experiment.trend_direction(layers, means)
    assert f"EER trend over layers: {direction}" in text
    long_rows = experiment.read_csv(out / "longitudinal.csv")
    assert {r["round"] for r in long_rows} == {"1", "2", "3", "4", "5"}
    assert (out / "summary.txt").read_text() == text


def test_seed_override_changes_run(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1"]) == 0
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2"]) == 0
    assert (tmp_path / "a/rounds.csv").read_bytes() != (tmp_path / "b/rounds.csv").read_bytes()
    assert "seed = 1" in (tmp_path / "a/config.ini").read_text()


def test_serial_equals_threaded(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "s"), "--threads", "1"]) == 0
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "p"), "--threads", "3"]) == 0
    for name in ("rounds.csv", "trials.csv", "eer.csv", "longitudinal.csv", "local_vs_global.csv"):
        assert (tmp_path / "s" / name).read_bytes() == (tmp_path / "p" / name).read_bytes()


def test_csv_number_format():
    assert experiment.fmt(1 / 3) == "0.333333333"
    assert experiment.fmt(True) == "1" and experiment.fmt(12) == "12"


def test_shared_corpus_dir(tmp_path):
    cfg = write_cfg(tmp_path)
    shared = str(tmp_path / "corpus")
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "x"), "--corpus", shared]) == 0
    assert not (tmp_path / "x" / "corpus.bin").exists()
    for sub in ("x", "y"):
        out = str(tmp_path / sub)
        assert main(["train", "--config", cfg, "--out", out, "--corpus", shared]) == 0
        assert main(["attack", "--config", cfg, "--out", out, "--corpus", shared]) == 0
        assert main(["report", "--out", out, "--corpus", shared]) == 0
    assert main(["report", "--out", str(tmp_path / "x")]) == 3
