import json
import math

import numpy as np
import pytest

from lossyact.cli import main
from lossyact.config import parse_config_text, resolve
from lossyact.errors import ConfigError
from lossyact.tensor import load_tensor, save_tensor
from oracles import smooth_field


def test_config_parsing(tmp_path):
    assert parse_config_text("# c\n a = 1 \n\nb=x=y  # tail\n") == {"a": "1", "b": "x=y"}
    with pytest.raises(ConfigError):
        parse_config_text("novalue")
    schema = {"n": 1, "x": 0.5, "flag": False, "name": "a", "grid": (1, 2)}
    p = tmp_path / "c.cfg"
    p.write_text("n=3\nx=1e-3\nflag=yes\ngrid=4, 5,6\n")
    cfg = resolve(schema, p, {"name": "b", "n": None})
    assert cfg == {"n": 3, "x": 1e-3, "flag": True, "name": "b", "grid": (4, 5, 6)}
    for bad in ("zzz=1", "n=1.5", "flag=maybe", "grid="):
        p.write_text(bad)
        with pytest.raises(ConfigError):
            resolve(schema, p)
    with pytest.raises(ConfigError):
        resolve(schema, tmp_path / "missing.cfg")


@pytest.fixture
def field_file(tmp_path):
    rng = np.random.default_rng(3)
    x = smooth_field(rng, (6, 32, 32))
    x[x < 0] = 0
    p = tmp_path / "x.tnsr"
    save_tensor(p, x)
    return p, x


def test_compress_decompress_roundtrip(tmp_path, field_file, capsys):
    src, x = field_file
    blob = tmp_path / "x.acz"
    assert main(["compress", str(src), "--eb", "1e-3", "--out", str(blob)]) == 0
    line = capsys.readouterr().out.split()
    ratio = float(line[1])
    assert float(line[3]) <= 1e-3
    assert ratio == pytest.approx(4 * x.size / blob.stat().st_size, rel=1e-5)
    out = tmp_path / "y.tnsr"
    assert main(["decompress", str(blob), "--out", str(out), "--filter",
                 "--reference", str(src)]) == 0
    text = capsys.readouterr().out
    y = load_tensor(out)
    zeros = x == 0
    assert y[zeros].tobytes() == x[zeros].tobytes()
    assert f"zeros_preserved {zeros.sum()}/{zeros.sum()}" in text
    assert np.abs(y - x).max() <= 2e-3


def test_compress_options_and_config_file(tmp_path, field_file):
    src, _ = field_file
    cfg = tmp_path / "c.cfg"
    cfg.write_text("eb = 1e-2\npredictor = lorenzo2d\nquant_radius = 256\n")
    assert main(["compress", str(src), "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["compress", str(src), "--eb", "1e-2", "--predictor", "lorenzo2d",
                 "--quant-radius", "256", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_exit_codes(tmp_path, field_file, capsys):
    src, _ = field_file
    assert main(["compress", str(src), "--out", str(tmp_path / "o")]) == 2
    assert main(["compress", str(src), "--eb", "1e-3", "--quant-radius", "7",
                 "--out", str(tmp_path / "o")]) == 2
    assert main(["compress", str(src), "--eb", "1e-3", "--set", "bogus=1",
                 "--out", str(tmp_path / "o")]) == 2
    assert main(["decompress", str(src), "--out", str(tmp_path / "o")]) == 3
    assert main(["compress", str(tmp_path / "missing"), "--eb", "1", "--out", "x"]) == 1
    assert main(["error-study", "--out", str(tmp_path / "e"), "--set", "geometries=2x2x2:1x3x3"]) == 2
    assert main(["train", "--out", str(tmp_path / "t"), "--set", "dataset=idx"]) == 2
    assert main(["train", "--out", str(tmp_path / "t"), "--set", "predictor=cubic"]) == 2
    err = capsys.readouterr().err
    assert "config error" in err and "format error" in err


def test_numerical_abort_exit_code(tmp_path):
    args = ["train", "--out", str(tmp_path / "t"), "--set", "n_train=128", "--set", "n_test=32",
            "--set", "lr=1e12", "--epochs", "1"]
    with pytest.warns(RuntimeWarning):
        assert main(args) == 4
    assert (tmp_path / "t" / "checkpoint_baseline" / "state.json").exists()


STUDY = ["--trials", "200", "--set", "batch_sizes=8,32", "--set", "error_bounds=1e-4,1e-3"]


def snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_error_study_outputs_and_determinism(tmp_path):
    for name in ("a", "b"):
        assert main(["error-study", "--out", str(tmp_path / name), "--seed", "7"] + STUDY) == 0
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    assert a == b
    assert "summary.csv" in a and "study.json" in a
    study = json.loads(a["study.json"])
    assert study["seed"] == 7 and study["config"]["trials"] == 200
    assert len(study["cases"]) == 2 * 2 * 2
    report = json.loads(a["cases/case000.json"])
    assert report["extra"]["seed"] == report["seed"]
    assert sum(report["histogram_counts"]) == report["sample_count"]


def test_fit_a_reports_default_and_fitted(tmp_path):
    assert main(["error-study", "--out", str(tmp_path / "s")] + STUDY) == 0
    assert main(["fit-a", "--out", str(tmp_path / "f"), "--study",
                 str(tmp_path / "s" / "study.json")]) == 0
    fit = json.loads((tmp_path / "f" / "fit_a.json").read_text())
    assert fit["paper_default_a"] == 0.32
    assert fit["fitted_a"] > 0 and fit["fitted_a_using_L_max"] > 0
    assert len(fit["residuals"]) == 8
    assert fit["max_fold_error"] < 1.5


TRAIN = ["--set", "n_train=512", "--set", "n_test=256", "--set", "W=5", "--epochs", "1"]


def test_train_outputs_and_determinism(tmp_path):
    for name in ("a", "b"):
        assert main(["train", "--out", str(tmp_path / name), "--seed", "3"] + TRAIN) == 0
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    assert set(a) == {"baseline.csv", "compressed.csv", "ledger.csv", "memory.csv",
                      "summary.json", "timing.json"}
    for name in a:
        if name != "timing.json":
            assert a[name] == b[name], name
    summary = json.loads(a["summary.json"])
    assert summary["seed"] == 3 and summary["config"]["W"] == 5
    header = a["compressed.csv"].decode().splitlines()[0]
    assert header == "iteration,train_loss,eval_accuracy,ratio_layer0,ratio_layer3"
    timing = json.loads(a["timing.json"])
    assert set(timing) == {"baseline_seconds", "compressed_seconds", "overhead_pct"}
    assert summary["iterations"] == 16
    assert math.isfinite(summary["mean_conv_compression_ratio"])
