import csv
import os
import stat

import pytest

from fpconvlstm import cli
from fpconvlstm.checkpoint import (
    CheckpointError, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
)
from fpconvlstm.model import ModelConfig, build_model
from fpconvlstm.plotting import curves_svg
from fpconvlstm.runconfig import RunConfig, RunConfigError, parse_run_config
from fpconvlstm.training import CSV_HEADER, TrainLog

SMALL = ["--image-size", "16", "--timesteps", "2", "--hidden-channels", "2",
         "--dense-units", "8", "--batch-size", "8"]


# -- checkpoint ---------------------------------------------------------------------

@pytest.mark.parametrize("variant", ["convlstm", "lstm_only"])
def test_checkpoint_round_trip_bitwise(variant, tmp_path):
    cfg = ModelConfig(num_classes=4, variant=variant, timesteps=2, frame_height=3,
                      frame_width=5, hidden_channels=2, dense_units=3, kernel=(3, 1),
                      dropout_rate=0.25, seed=9)
    m = build_model(cfg)
    save_checkpoint(m, tmp_path / "a.ckpt")
    back = load_checkpoint(tmp_path / "a.ckpt")
    assert back.config == cfg
    for k, v in m.parameters().items():
        assert back.parameters()[k].tobytes() == v.tobytes()
    save_checkpoint(back, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_header_layout():
    m = build_model(ModelConfig(num_classes=2, timesteps=1, frame_height=2, frame_width=2,
                                hidden_channels=1, dense_units=1))
    data = encode_checkpoint(m)
    assert data[:4] == b"CLFP"
    assert int.from_bytes(data[4:8], "little") == 1


@pytest.mark.parametrize("mutate, match", [
    (lambda d: b"XXXX" + d[4:], "magic"),
    (lambda d: d[:4] + (2).to_bytes(4, "little") + d[8:], "version"),
    (lambda d: d[:-3], "truncated"),
    (lambda d: d + b"\0", "trailing"),
])
def test_checkpoint_corruption(mutate, match):
    m = build_model(ModelConfig(num_classes=2, timesteps=1, frame_height=2, frame_width=2,
                                hidden_channels=1, dense_units=1))
    with pytest.raises(CheckpointError, match=match):
        decode_checkpoint(mutate(encode_checkpoint(m)))


# -- run config ---------------------------------------------------------------------

def test_run_config_parse_and_round_trip():
    rc = parse_run_config("# comment\nvariant = lstm_only\nepochs=7  # inline\n\nlr = 0.01\n")
    assert (rc.variant, rc.epochs, rc.lr) == ("lstm_only", 7, 0.01)
    assert parse_run_config(rc.to_text()) == rc
    assert rc.with_overrides({"epochs": None, "seed": 3}).seed == 3
    assert RunConfig(kernel="5x3").kernel_size == (5, 3)


@pytest.mark.parametrize("text", ["bogus = 1", "epochs = ten", "no equals sign"])
def test_run_config_errors(text):
    with pytest.raises(RunConfigError):
        parse_run_config(text)


# -- plotting -----------------------------------------------------------------------

def test_curves_svg_has_five_panels():
    import xml.etree.ElementTree as ET
    log = TrainLog.from_csv(",".join(CSV_HEADER) + "\n"
                            "1,train,1.0,0.5,0.2,0.1,0.6\n1,val,1.2,0.4,0.1,0.1,nan\n"
                            "2,train,0.5,0.9,0.8,0.7,0.9\n2,val,0.7,0.8,0.6,0.5,0.8\n")
    root = ET.fromstring(curves_svg(log))
    ns = "{http://www.w3.org/2000/svg}"
    panels = root.findall(f"{ns}g")
    assert [p.get("id") for p in panels] == ["loss", "accuracy", "precision", "recall", "auc"]
    assert len(root.findall(f".//{ns}polyline")) == 10
    assert all("epoch" in "".join(p.itertext()) for p in panels)


# -- commands -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    data = root / "data"
    assert cli.main(["generate", "--subjects", "2", "--impressions", "3", "--seed", "1",
                     "--image-size", "16", "--out", str(data)]) == 0
    return root, data


def test_generate_count_and_determinism(tmp_path):
    args = ["generate", "--subjects", "4", "--impressions", "3", "--seed", "7",
            "--image-size", "32"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    files = sorted(p.name for p in (tmp_path / "a").glob("*.pgm"))
    assert len(files) == 4 * 3 * 4
    for name in files + ["manifest.csv"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_generate_unwritable_dir(tmp_path, capsys):
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(stat.S_IRUSR | stat.S_IXUSR)
    try:
        assert cli.main(["generate", "--out", str(locked / "d"), "--subjects", "2",
                         "--impressions", "1"]) == 1
    finally:
        locked.chmod(stat.S_IRWXU)
    assert "error" in capsys.readouterr().err


def test_generate_path_is_a_file(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["generate", "--out", str(blocker / "d"), "--subjects", "2",
                     "--impressions", "1", "--image-size", "16"]) == 1
    assert "error" in capsys.readouterr().err


def test_train_writes_artifacts(toy, capsys):
    root, data = toy
    out = root / "run"
    assert cli.main(["train", "--data", str(data), "--out", str(out), "--epochs", "2"]
                    + SMALL) == 0
    for name in ("metrics.csv", "best.ckpt", "final.ckpt", "config.txt", "curves.svg"):
        assert (out / name).is_file()
    rows = list(csv.reader((out / "metrics.csv").open()))
    assert tuple(rows[0]) == CSV_HEADER and len(rows) == 5
    assert "best epoch" in capsys.readouterr().out


def test_train_lstm_only_echoes_variant(toy):
    root, data = toy
    out = root / "lstm"
    assert cli.main(["train", "--data", str(data), "--out", str(out), "--epochs", "1",
                     "--variant", "lstm_only"] + SMALL) == 0
    assert "variant = lstm_only" in (out / "config.txt").read_text()
    assert load_checkpoint(out / "final.ckpt").config.variant == "lstm_only"


def test_train_config_file_and_override(toy):
    root, data = toy
    conf = root / "run.conf"
    conf.write_text("epochs = 1\nseed = 4\nhidden_channels = 3\n")
    out = root / "conf"
    assert cli.main(["train", "--data", str(data), "--out", str(out), "--config", str(conf),
                     "--seed", "5"] + SMALL[:4] + SMALL[6:]) == 0
    echoed = parse_run_config((out / "config.txt").read_text())
    assert (echoed.epochs, echoed.seed, echoed.hidden_channels) == (1, 5, 3)


def test_train_missing_data(tmp_path, capsys):
    assert cli.main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


def test_train_bad_timesteps(toy, tmp_path):
    _, data = toy
    assert cli.main(["train", "--data", str(data), "--out", str(tmp_path), "--epochs", "1",
                     "--image-size", "16", "--timesteps", "3"]) == 1


@pytest.fixture(scope="module")
def perfect_run(tmp_path_factory):
    """Two well-separated subjects trained until the train split is perfect."""
    root = tmp_path_factory.mktemp("perfect")
    data = root / "data"
    cli.main(["generate", "--subjects", "2", "--impressions", "6", "--seed", "0",
              "--image-size", "16", "--layout", "mixed", "--out", str(data)])
    out = root / "run"
    assert cli.main(["train", "--data", str(data), "--out", str(out), "--epochs", "15",
                     "--lr", "0.01", "--dropout", "0"] + SMALL) == 0
    return data, out


def test_eval_matches_last_train_row(perfect_run, tmp_path, capsys):
    data, out = perfect_run
    capsys.readouterr()
    assert cli.main(["eval", "--checkpoint", str(out / "final.ckpt"), "--data", str(data),
                     "--split", "train", "--out", str(tmp_path)]) == 0
    printed = capsys.readouterr().out
    last = TrainLog.read_csv(out / "metrics.csv").rows("train")[-1]
    assert last.accuracy == 1.0
    assert "100.00" in printed
    row = list(csv.DictReader((tmp_path / "eval.csv").open()))[0]
    for key in ("loss", "accuracy", "precision", "recall", "auc"):
        assert abs(float(row[key]) - getattr(last, key)) <= 1e-4


def test_eval_class_count_mismatch(perfect_run, toy, tmp_path):
    _, out = perfect_run
    other = tmp_path / "three"
    cli.main(["generate", "--subjects", "3", "--impressions", "2", "--image-size", "16",
              "--out", str(other)])
    assert cli.main(["eval", "--checkpoint", str(out / "final.ckpt"), "--data", str(other),
                     "--out", str(tmp_path)]) == 1


def test_eval_corrupt_checkpoint(perfect_run, tmp_path, capsys):
    data, out = perfect_run
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE" + (out / "final.ckpt").read_bytes()[4:])
    assert cli.main(["eval", "--checkpoint", str(bad), "--data", str(data),
                     "--out", str(tmp_path)]) == 1
    assert "magic" in capsys.readouterr().err


def test_gradcheck_exit_codes(capsys):
    assert cli.main(["gradcheck", "--variant", "both", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "[convlstm]" in out and "[lstm_only]" in out
    assert cli.main(["gradcheck", "--variant", "lstm_only", "--corrupt-backward"]) == 2


def test_deterministic_training_artifacts(toy, tmp_path):
    _, data = toy
    for name in ("a", "b"):
        assert cli.main(["train", "--data", str(data), "--out", str(tmp_path / name),
                         "--epochs", "2", "--seed", "3"] + SMALL) == 0
    for f in ("metrics.csv", "best.ckpt", "final.ckpt", "curves.svg", "config.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
