import hashlib
import json

import numpy as np
import pytest

from wvad.audio_io import Waveform, read_labels, write_wav
from wvad.cli import main
from wvad.model import EnsembleModel, WvadConfig, WvadModel, load_model, save_model

SPEC = "n_utterances = 6\nduration = 0.5\nsnr_grid = 0, 10\n"
SMALL = "encoder_channels = 4,4,2,2\nencoder_kernel = 5\ndecoder_kernels = 5,3,1\n"


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "spec.txt").write_text(SPEC)
    assert main(["synth-data", str(root / "corpus"), "--spec", str(root / "spec.txt"),
                 "--seed", "4"]) == 0
    return root / "corpus"


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    root = tmp_path_factory.mktemp("model")
    (root / "cfg.txt").write_text("epochs = 2\nlr = 0.003\nbatch = 2\nseed = 1\n" + SMALL)
    out = root / "m.wvad"
    assert main(["train", str(corpus), "--config", str(root / "cfg.txt"), "--out", str(out)]) == 0
    return out


def test_synth_data_layout(corpus):
    lines = [l for l in (corpus / "manifest.txt").read_text().splitlines() if not l.startswith("#")]
    assert len(lines) == 6
    assert len(list((corpus / "noisy").glob("*.wav"))) == 6
    assert len(list((corpus / "clean").glob("*.wav"))) == 6
    assert len(list((corpus / "labels").glob("*.txt"))) == 6
    manifest = json.loads((corpus / "run_manifest.json").read_text())
    assert manifest["seed"] == 4 and manifest["command"] == "synth-data"


def test_synth_data_deterministic(corpus, tmp_path):
    (tmp_path / "spec.txt").write_text(SPEC)
    assert main(["synth-data", str(tmp_path / "c"), "--spec", str(tmp_path / "spec.txt"),
                 "--seed", "4"]) == 0
    for f in sorted((corpus / "noisy").glob("*.wav")):
        assert sha(f) == sha(tmp_path / "c" / "noisy" / f.name)
    assert (corpus / "manifest.txt").read_text() == (tmp_path / "c" / "manifest.txt").read_text()


def test_missing_spec_exit_2(tmp_path, capsys):
    assert main(["synth-data", str(tmp_path / "x"), "--spec", str(tmp_path / "nope.txt")]) == 2
    assert "not found" in capsys.readouterr().err


def test_bad_spec_key(tmp_path):
    (tmp_path / "spec.txt").write_text("colour = blue\n")
    assert main(["synth-data", str(tmp_path / "x"), "--spec", str(tmp_path / "spec.txt")]) == 1


def test_train_outputs(trained):
    model = load_model(trained)
    assert isinstance(model, WvadModel)
    assert model.config.encoder_channels == (4, 4, 2, 2)
    report = (trained.parent / (trained.name + ".train.csv")).read_text().splitlines()
    assert report[0] == "epoch,loss,acc" and len(report) == 3
    manifest = json.loads((trained.parent / (trained.name + ".manifest.json")).read_text())
    assert manifest["config"]["learning_rate"] == 0.003


def test_zero_lr_keeps_weights(corpus, tmp_path):
    (tmp_path / "cfg.txt").write_text("epochs = 1\nlr = 0\nseed = 9\n" + SMALL)
    assert main(["train", str(corpus), "--config", str(tmp_path / "cfg.txt"),
                 "--out", str(tmp_path / "m")]) == 0
    cfg = WvadConfig(encoder_channels=(4, 4, 2, 2), encoder_kernel=5, decoder_kernels=(5, 3, 1))
    save_model(tmp_path / "init", WvadModel.init(cfg, seed=9))
    assert sha(tmp_path / "m") == sha(tmp_path / "init")


def test_unknown_config_key(corpus, tmp_path):
    (tmp_path / "cfg.txt").write_text("epochs = 1\nwarmup = 3\n")
    assert main(["train", str(corpus), "--config", str(tmp_path / "cfg.txt"),
                 "--out", str(tmp_path / "m")]) == 1


def test_missing_config_exit_2(corpus, tmp_path):
    assert main(["train", str(corpus), "--config", str(tmp_path / "none"),
                 "--out", str(tmp_path / "m")]) == 2


def test_train_ensemble(corpus, tmp_path):
    (tmp_path / "cfg.txt").write_text("epochs = 1\ntree = speaker_class\n" + SMALL)
    out = tmp_path / "e.wvad"
    assert main(["train-ensemble", str(corpus), "--config", str(tmp_path / "cfg.txt"),
                 "--out", str(out)]) == 0
    ens = load_model(out)
    assert isinstance(ens, EnsembleModel)
    assert ens.n_encoders == 2 and ens.fb.in_channels == 4
    assert (tmp_path / "e.wvad.stage1.A.csv").exists()


def test_eval_by_snr(trained, corpus, tmp_path):
    out = tmp_path / "summary.csv"
    assert main(["eval", str(trained), str(corpus), "--by", "snr", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "snr,n_utts,n_frames,acc,auc"
    assert [l.split(",")[0] for l in lines[1:]] == ["0.0", "10.0", "AVG"]
    n = [int(l.split(",")[2]) for l in lines[1:]]
    assert n[0] + n[1] == n[2]


def test_eval_unknown_key(trained, corpus, tmp_path):
    assert main(["eval", str(trained), str(corpus), "--by", "gender",
                 "--out", str(tmp_path / "s.csv")]) == 1


def test_predict(trained, tmp_path):
    rng = np.random.default_rng(0)
    write_wav(tmp_path / "in.wav", Waveform(0.1 * rng.standard_normal(800), 8000))
    assert main(["predict", str(trained), str(tmp_path / "in.wav"), str(tmp_path / "out.txt"),
                 "--scores", str(tmp_path / "scores.csv")]) == 0
    assert len(read_labels(tmp_path / "out.txt")) == 9
    rows = (tmp_path / "scores.csv").read_text().splitlines()
    assert rows[0] == "y_ns,y_s" and len(rows) == 10


def test_predict_wrong_rate(trained, tmp_path):
    write_wav(tmp_path / "in.wav", Waveform(np.zeros(1600), 16000))
    assert main(["predict", str(trained), str(tmp_path / "in.wav"), str(tmp_path / "o.txt")]) == 1


@pytest.mark.parametrize("stage", ["db1", "db2", "db3", "final"])
def test_plot_conservation(trained, corpus, tmp_path, stage):
    assert main(["plot", str(trained), str(corpus), "--stage", stage, "--filter", "all",
                 "--out-dir", str(tmp_path)]) == 0
    rows = [l.split(",") for l in (tmp_path / "hist.csv").read_text().splitlines()[1:]]
    assert len(rows) == 10
    frames = sum(len(read_labels(p)) for p in (corpus / "labels").glob("*.txt"))
    assert sum(int(r[2]) for r in rows) == frames
    assert sum(int(r[3]) for r in rows) == frames
    assert (tmp_path / "roc.csv").read_text().startswith("threshold,fpr,tpr")


def test_plot_zero_model(corpus, tmp_path):
    cfg = WvadConfig(encoder_channels=(4, 4, 2, 2), encoder_kernel=5, decoder_kernels=(5, 3, 1))
    save_model(tmp_path / "zero", WvadModel.init(cfg))
    assert main(["plot", str(tmp_path / "zero"), str(corpus), "--stage", "db3",
                 "--out-dir", str(tmp_path)]) == 0
    rows = [l.split(",") for l in (tmp_path / "hist.csv").read_text().splitlines()[1:]]
    counts = [int(r[2]) for r in rows]
    assert sum(c > 0 for c in counts) == 1 and counts[5] == sum(counts)


def test_plot_unknown_stage(trained, corpus, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["plot", str(trained), str(corpus), "--stage", "db4", "--out-dir", str(tmp_path)])
    assert exc.value.code != 0
