"""End-to-end subcommand flows on a miniature experiment.

One module-scoped pipeline run (simulate -> preprocess -> train -> eval ->
budget -> report) backs most assertions; config diagnostics and exit codes
get their own small cases.
"""

import csv
import json

import numpy as np
import pytest

from engsim.cli import load_config, main

TINY_CONFIG = {
    "seed": 7,
    "scene": {"n_axons": 6, "seed": 3},
    "scenario": {"on_seconds": 6.0, "replicates": 1},
    "windows_ms": [100.0],
    "train": {"max_epochs": 2, "patience": 2, "batch_size": 16},
    "evaluation": {
        "architectures": ["engnet"],
        "k_folds": 3,
        "folds": [0],
        "measure_timing": False,
    },
}


def write_config(path, extra=None):
    cfg = json.loads(json.dumps(TINY_CONFIG))
    if extra:
        for key, val in extra.items():
            if isinstance(val, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(val)
            else:
                cfg[key] = val
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


@pytest.fixture(scope="module", autouse=True)
def _no_ambient_seed():
    """A stray ENGSIM_SEED in the environment would skew every run here."""
    mp = pytest.MonkeyPatch()
    mp.delenv("ENGSIM_SEED", raising=False)
    yield
    mp.undo()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the full chain once; tests inspect the output tree."""
    root = tmp_path_factory.mktemp("run")
    cfg_path = write_config(root / "config.json")
    out = root / "exp"
    base = ["--config", str(cfg_path), "--output-dir", str(out)]
    assert main(["simulate", *base]) == 0
    assert main(["preprocess", *base]) == 0
    assert main(["train", *base]) == 0
    assert main(["eval", *base]) == 0
    assert main(["budget", *base]) == 0
    assert main(["report", *base]) == 0
    return out


def test_simulate_writes_one_recording_per_class(pipeline):
    signals = pipeline / "signals"
    stems = sorted(p.stem for p in signals.glob("*.engs"))
    assert stems == [
        "dorsiflexion_rep0", "pain_rep0", "plantarflexion_rep0", "touch_rep0",
    ]
    manifest = json.loads(
        (signals / "touch_rep0.json").read_text(encoding="utf-8")
    )
    assert manifest["n_channels"] == 16
    assert manifest["fs_hz"] == 30000
    assert manifest["class"] == "touch"
    for start, end, label in manifest["labels"]:
        assert 0 <= start < end <= manifest["duration_s"]
        assert label == 2


def test_preprocess_builds_a_balanced_dataset(pipeline):
    ddir = pipeline / "dataset_w100ms"
    manifest = json.loads((ddir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["window_ms"] == 100.0
    assert manifest["fs_hz"] == 5000.0
    assert manifest["class_names"] == list(
        ("dorsiflexion", "plantarflexion", "touch", "pain")
    )
    n = manifest["n_windows"]
    assert n > 100
    hist = np.array(manifest["histogram"])
    assert hist.sum() == n
    assert (hist > 0).all()


def test_train_writes_reports_and_checkpoints(pipeline):
    reports = pipeline / "reports"
    with open(reports / "eval.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1  # one architecture, one fold
    row = rows[0]
    assert row["architecture"] == "engnet"
    assert float(row["window_ms"]) == 100.0
    assert 0.0 <= float(row["macro_f1"]) <= 1.0
    ckpts = sorted((pipeline / "checkpoints").glob("*.ckpt"))
    assert [p.name for p in ckpts] == ["engnet_w100ms_fold0.ckpt"]
    summary = (reports / "eval_summary.txt").read_text(encoding="utf-8")
    assert "engnet" in summary


def test_eval_reproduces_training_time_scores(pipeline):
    path = pipeline / "reports" / "eval_from_checkpoints.csv"
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert rows[0]["matches_stored"] == "True"
    assert rows[0]["accuracy"] == rows[0]["stored_accuracy"]


def test_budget_reports_paper_uplink_values(pipeline):
    text = (pipeline / "reports" / "budget.txt").read_text(encoding="utf-8")
    assert "T_w =  50 ms" in text
    assert "(~29 ms)" in text
    assert "(~57 ms)" in text
    assert "(~114 ms)" in text
    assert "(~286 ms)" in text
    # no timing measurements were taken in this run
    assert "no meas." in text


def test_budget_with_measured_times(tmp_path):
    cfg_path = write_config(tmp_path / "c.json")
    measured = tmp_path / "measured.json"
    measured.write_text(
        json.dumps({"engnet": {"50": 0.004, "500": 0.004}}), encoding="utf-8"
    )
    out = tmp_path / "exp"
    code = main([
        "budget", "--config", str(cfg_path), "--output-dir", str(out),
        "--measured", str(measured),
    ])
    assert code == 0
    with open(out / "reports" / "budget.csv", newline="",
              encoding="utf-8") as fh:
        rows = {
            (r["window_ms"], r["architecture"]): r
            for r in csv.DictReader(fh)
        }
    assert rows[("50.0", "engnet")]["feasible"] == "True"
    # past the deadline no classifier time can rescue the 500 ms window
    assert rows[("500.0", "engnet")]["feasible"] == "False"


def test_report_aggregates_folds(pipeline):
    text = (pipeline / "reports" / "report.txt").read_text(encoding="utf-8")
    assert "engnet" in text
    assert "mean F1" in text
    with open(pipeline / "reports" / "summary_by_window.csv", newline="",
              encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert rows[0]["architecture"] == "engnet"


def test_rerun_of_preprocess_is_byte_identical(pipeline, tmp_path):
    cfg_path = write_config(tmp_path / "c.json")
    out2 = tmp_path / "exp2"
    base = ["--config", str(cfg_path), "--output-dir", str(out2)]
    assert main(["simulate", *base]) == 0
    assert main(["preprocess", *base]) == 0
    for rel in ("signals/touch_rep0.engs", "dataset_w100ms/windows.engs",
                "dataset_w100ms/labels.csv"):
        a = (pipeline / rel).read_bytes()
        b = (out2 / rel).read_bytes()
        assert a == b, f"{rel} differs between reruns"


# ---------------------------------------------------------------------------
# Config handling and exit codes
# ---------------------------------------------------------------------------

class _NoArgs:
    config = None
    output_dir = None
    seed = None
    window_ms = None
    arch = None


def test_defaults_load_without_a_config_file():
    cfg = load_config(None, _NoArgs())
    assert cfg["seed"] == 0
    assert cfg["windows_ms"] == [100.0]
    assert cfg["evaluation"]["k_folds"] == 5


def test_env_seed_overrides_config(tmp_path, monkeypatch):
    cfg_path = write_config(tmp_path / "c.json")
    monkeypatch.setenv("ENGSIM_SEED", "99")
    cfg = load_config(str(cfg_path), _NoArgs())
    assert cfg["seed"] == 99


def test_env_seed_must_be_an_integer(tmp_path, monkeypatch, capsys):
    cfg_path = write_config(tmp_path / "c.json")
    monkeypatch.setenv("ENGSIM_SEED", "lots")
    code = main(["report", "--config", str(cfg_path),
                 "--output-dir", str(tmp_path / "x")])
    assert code == 2
    assert "ENGSIM_SEED" in capsys.readouterr().err


def test_unknown_config_key_suggests_closest(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"windows_m": [100.0]}), encoding="utf-8")
    code = main(["budget", "--config", str(cfg_path),
                 "--output-dir", str(tmp_path / "x")])
    assert code == 2
    err = capsys.readouterr().err
    assert "config.windows_m: unknown key" in err
    assert "did you mean 'windows_ms'?" in err


def test_nested_key_errors_carry_dotted_paths(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(
        json.dumps({"train": {"max_epoch": 3}}), encoding="utf-8"
    )
    code = main(["budget", "--config", str(cfg_path),
                 "--output-dir", str(tmp_path / "x")])
    assert code == 2
    assert "config.train.max_epoch" in capsys.readouterr().err


def test_type_errors_name_expected_type(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(
        json.dumps({"train": {"max_epochs": "ten"}}), encoding="utf-8"
    )
    code = main(["budget", "--config", str(cfg_path),
                 "--output-dir", str(tmp_path / "x")])
    assert code == 2
    err = capsys.readouterr().err
    assert "config.train.max_epochs" in err
    assert "expected int" in err


def test_bool_does_not_pass_as_int(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"seed": True}), encoding="utf-8")
    code = main(["budget", "--config", str(cfg_path),
                 "--output-dir", str(tmp_path / "x")])
    assert code == 2
    assert "config.seed" in capsys.readouterr().err


def test_invalid_json_is_a_config_error(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text("{not json", encoding="utf-8")
    code = main(["budget", "--config", str(cfg_path),
                 "--output-dir", str(tmp_path / "x")])
    assert code == 2
    assert "invalid JSON" in capsys.readouterr().err


def test_missing_config_file_is_a_data_error(tmp_path, capsys):
    code = main(["budget", "--config", str(tmp_path / "absent.json"),
                 "--output-dir", str(tmp_path / "x")])
    assert code == 3
    assert "config file not found" in capsys.readouterr().err


def test_preprocess_without_signals_is_a_data_error(tmp_path, capsys):
    cfg_path = write_config(tmp_path / "c.json")
    code = main(["preprocess", "--config", str(cfg_path),
                 "--output-dir", str(tmp_path / "empty")])
    assert code == 3
    assert "run `engsim simulate` first" in capsys.readouterr().err


def test_train_without_dataset_is_a_data_error(tmp_path, capsys):
    cfg_path = write_config(tmp_path / "c.json")
    code = main(["train", "--config", str(cfg_path),
                 "--output-dir", str(tmp_path / "empty")])
    assert code == 3
    assert "run `engsim preprocess` first" in capsys.readouterr().err


def test_unknown_class_name_is_a_config_error(tmp_path, capsys):
    cfg_path = write_config(
        tmp_path / "c.json", {"scenario": {"classes": ["itch"]}}
    )
    code = main(["simulate", "--config", str(cfg_path),
                 "--output-dir", str(tmp_path / "x")])
    assert code == 2
    assert "unknown class 'itch'" in capsys.readouterr().err


def test_unknown_architecture_is_a_config_error(tmp_path, capsys):
    cfg_path = write_config(
        tmp_path / "c.json", {"evaluation": {"architectures": ["mlp"]}}
    )
    code = main(["train", "--config", str(cfg_path),
                 "--output-dir", str(tmp_path / "x")])
    assert code == 2
    assert "unknown architecture 'mlp'" in capsys.readouterr().err


def test_class_subset_packs_labels_densely(tmp_path):
    cfg_path = write_config(
        tmp_path / "c.json", {"scenario": {"classes": ["touch", "pain"]}}
    )
    out = tmp_path / "exp"
    base = ["--config", str(cfg_path), "--output-dir", str(out)]
    assert main(["simulate", *base]) == 0
    assert main(["preprocess", *base]) == 0
    manifest = json.loads(
        (out / "dataset_w100ms" / "manifest.json").read_text(encoding="utf-8")
    )
    assert manifest["class_names"] == ["touch", "pain"]
    hist = manifest["histogram"]
    assert len(hist) == 2
    assert all(h > 0 for h in hist)
