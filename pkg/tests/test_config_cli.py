import json
import re
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from mapcsim.cli import main
from mapcsim.config import ConfigError, default_ini, load_config, parse_config

SMALL_INI = """
[predictor]
hidden_units = 8
layers = 1
dropout = 0.0
batch_size = 32
epochs = 2
train_users = 4
train_steps = 40

[allocator]
scenarios = 40
batch_size = 16
epochs = 2

[power]
oracle_levels = 4

[simulation]
n_slots = 4
repetitions = 2
user_counts = 2, 3
speeds = 0.2, 1.5
speed_users = 3
horizons = 1, 2, 3
rmse_users = 3
rmse_steps = 30
"""


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    ini = d / "small.ini"
    ini.write_text(SMALL_INI)
    return d, ini


def test_defaults_round_trip():
    cfg = parse_config(default_ini())
    assert cfg.to_dict() == load_config().to_dict()
    assert cfg["predictor"]["epochs"] == 100 and cfg["predictor"]["learning_rate"] == 1e-3
    assert cfg.scenario().layout().n_aps == 12


@pytest.mark.parametrize("text, line", [
    ("[power]\nr_min = lots\n", 2),
    ("[power]\n\nbogus = 1\n", 3),
    ("[nowhere]\nx = 1\n", 1),
    ("x = 1\n", 1),
    ("[simulation]\nschemes = MAPC, FOO\n", 2),
    ("[power]\nee_mode = cubic\n", 2),
])
def test_errors_are_line_anchored(text, line):
    with pytest.raises(ConfigError, match=rf"cfg\.ini:{line}:"):
        parse_config(text, "cfg.ini")


def test_malformed_config_exits_two(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[mobility]\nalpha = 0.8\nalpha = oops\n")
    assert main(["validate", "--config", str(bad)]) == 2
    assert re.search(r"bad\.ini:\d+:", capsys.readouterr().err)


def test_print_config_parses_back(capsys):
    assert main(["print-config"]) == 0
    assert parse_config(capsys.readouterr().out).to_dict() == load_config().to_dict()


def test_generate_is_reproducible(small):
    d, ini = small
    hashes = []
    for name in ("g1", "g2"):
        assert main(["generate", "mobility", "--config", str(ini), "--seed", "5", "--out", str(d / name)]) == 0
        hashes.append(json.loads((d / name / "manifest.json").read_text())["outputs"]["traces.csv"])
    assert hashes[0] == hashes[1]
    man = json.loads((d / "g1" / "manifest.json").read_text())
    assert man["seed"] == 5 and man["config"]["predictor"]["hidden_units"] == 8


def test_train_missing_dataset_exits_two(small, capsys):
    d, ini = small
    assert main(["train", "predictor", "--config", str(ini), "--dataset", str(d / "nope.csv"),
                 "--out", str(d / "t0")]) == 2
    assert "not found" in capsys.readouterr().err


def test_unwritable_output_exits_two(small, tmp_path):
    _, ini = small
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["generate", "mobility", "--config", str(ini), "--out", str(blocker / "sub")]) == 2


@pytest.fixture(scope="module")
def trained(small):
    d, ini = small
    assert main(["generate", "mobility", "--config", str(ini), "--out", str(d / "data")]) == 0
    assert main(["generate", "labels", "--config", str(ini), "--out", str(d / "data")]) == 0
    assert main(["train", "predictor", "--config", str(ini), "--dataset", str(d / "data" / "traces.csv"),
                 "--out", str(d / "pred")]) == 0
    assert main(["train", "allocator", "--config", str(ini), "--dataset", str(d / "data" / "labels.npz"),
                 "--out", str(d / "alloc")]) == 0
    return d, ini


def test_train_writes_checkpoint_and_curve(trained):
    d, _ = trained
    for sub, ck in (("pred", "predictor.npz"), ("alloc", "allocator.npz")):
        assert (d / sub / ck).is_file()
        lines = (d / sub / "loss_curve.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == 3
        assert (d / sub / "manifest.json").is_file()


@pytest.mark.parametrize("kind, data, ck", [("predictor", "traces.csv", "predictor.npz"),
                                            ("allocator", "labels.npz", "allocator.npz")])
def test_resume_continues_identically(trained, kind, data, ck):
    d, ini = trained
    ds = str(d / "data" / data)
    common = ["--config", str(ini), "--dataset", ds]
    assert main(["train", kind, *common, "--epochs", "4", "--out", str(d / f"{kind}_full")]) == 0
    assert main(["train", kind, *common, "--epochs", "2", "--out", str(d / f"{kind}_a")]) == 0
    assert main(["train", kind, *common, "--epochs", "2", "--resume", str(d / f"{kind}_a" / ck),
                 "--out", str(d / f"{kind}_b")]) == 0
    with np.load(d / f"{kind}_full" / ck) as a, np.load(d / f"{kind}_b" / ck) as b:
        for k in a.files:
            if k.startswith(("param/", "adam/")):
                np.testing.assert_array_equal(a[k], b[k])
    full = (d / f"{kind}_full" / "loss_curve.csv").read_text()
    assert (d / f"{kind}_b" / "loss_curve.csv").read_text() == full


def test_validate_files(trained, capsys):
    d, ini = trained
    files = [d / "data" / "traces.csv", d / "data" / "labels.npz", d / "pred" / "predictor.npz"]
    assert main(["validate", "--config", str(ini), *map(str, files)]) == 0
    out = capsys.readouterr().out
    assert "mobility traces" in out and "labelled scenario set" in out and "predictor checkpoint" in out


def _svg_labels(path):
    root = ET.parse(path).getroot()
    ns = "{http://www.w3.org/2000/svg}"
    return {t.get("class"): t.text for t in root.iter(f"{ns}text") if t.get("class") in ("xlabel", "ylabel")}


@pytest.mark.parametrize("name, x, y", [("rmse", "horizon", "position_rmse"),
                                        ("ee_users", "n_users", "mean_ee"),
                                        ("ee_speed", "speed", "mean_ee")])
def test_experiments_write_tables_and_charts(trained, name, x, y):
    d, ini = trained
    out = d / f"exp_{name}"
    args = ["experiment", name, "--config", str(ini), "--predictor", str(d / "pred" / "predictor.npz"),
            "--allocator", str(d / "alloc" / "allocator.npz"), "--jobs", "1", "--out", str(out)]
    assert main(args) == 0
    csvs = sorted(out.glob(f"{name}_*.csv"))
    assert len(csvs) == 1
    header = csvs[0].read_text().splitlines()[0].split(",")
    assert x in header and y in header
    svg = sorted(out.glob(f"{name}_{y}_*.svg"))[0]
    labels = _svg_labels(svg)
    assert labels == {"xlabel": x, "ylabel": y}
    assert set(labels.values()) <= set(header)
    # rerun: byte-identical table
    again = d / f"exp_{name}_again"
    assert main(args[:-1] + [str(again)]) == 0
    assert (again / csvs[0].name).read_bytes() == csvs[0].read_bytes()


def test_unknown_experiment_lists_names(trained, capsys):
    d, ini = trained
    assert main(["experiment", "fig9", "--config", str(ini), "--out", str(d / "x")]) == 2
    err = capsys.readouterr().err
    assert "rmse" in err and "ee_users" in err and "ee_speed" in err


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "mapcsim.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("mapcsim")
    r = subprocess.run([sys.executable, "-m", "mapcsim.cli", "train"], capture_output=True, text=True)
    assert r.returncode == 2
