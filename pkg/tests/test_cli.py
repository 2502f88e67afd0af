# -*- coding: utf-8 -*-
import json
from pathlib import Path

import pandas as pd
import pytest

from main import main
from telezoom.commands.common import constraint_path, load_constraints
from telezoom.config import Config
from telezoom.errors import ConstraintError
from telezoom.model import Imputer
from telezoom.storage import read_class_sidecar, read_records, write_class_sidecar, write_records

TINY_PRESETS = """\
tiny:
  configs:
    - name: tiny-a
      duration_ms: 1500
      background_load: 0.3
      burst_rate: 12.0
      burst_duration_ms: [5, 20]
      burst_gap_ms: [40, 120]
  held_out:
    - name: tiny-unseen
      duration_ms: 1500
      background_load: 0.25
      burst_rate: 14.0
      burst_duration_ms: [8, 25]
      burst_gap_ms: [50, 140]
"""

TINY_RUN = """\
seed: 5
data:
  preset: tiny
  zoom: 10
  context_len: 3
  traces_per_config: 2
model:
  layers: 1
  width: 16
  heads: 2
  ff_width: 32
  dropout: 0.0
train:
  epochs: 1
  batch_size: 32
  patience: 1
kal:
  max_outer: 1
cem:
  time_budget_s: 5.0
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "presets.yaml").write_text(TINY_PRESETS, encoding="utf-8")
    (tmp_path / "run.yaml").write_text(TINY_RUN, encoding="utf-8")
    return tmp_path


def generate(out, seed="5"):
    return main(["--config", "run.yaml", "generate", "--presets", "presets.yaml", "--seed", seed, "--out", out])


def test_usage_errors_exit_1(workdir):
    with pytest.raises(SystemExit) as info:
        main(["generate", "--zoom", "ten"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["--no-such-flag"])
    assert info.value.code == 1
    assert main([]) == 1


def test_bad_config_exits_1(workdir):
    (workdir / "bad.yaml").write_text("data:\n  zooom: 3\n", encoding="utf-8")
    assert main(["--config", "bad.yaml", "generate", "--out", "x"]) == 1


def test_missing_input_exits_2(workdir):
    assert main(["impute", "--input", "nope.jsonl", "--baseline", "linear", "--out", "x"]) == 2


def test_generate_is_byte_identical_for_a_seed(workdir):
    assert generate("a") == 0
    assert generate("b") == 0
    for name in ("train.jsonl", "val.jsonl", "test.jsonl", "test_coarse.csv"):
        assert (workdir / "a" / name).read_bytes() == (workdir / "b" / name).read_bytes(), name
    assert generate("c", seed="6") == 0
    assert (workdir / "a" / "train.jsonl").read_bytes() != (workdir / "c" / "train.jsonl").read_bytes()

    manifest = json.loads((workdir / "a" / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "generate" and manifest["seed"] == 5
    assert manifest["config"]["data"]["zoom"] == 10
    assert "presets.yaml" in manifest["inputs"]


def test_manifest_replay_reproduces_outputs(workdir):
    assert generate("a") == 0
    before = (workdir / "a" / "test.jsonl").read_bytes()
    (workdir / "a" / "test.jsonl").unlink()
    assert main(["--manifest", "a/manifest.json"]) == 0
    assert (workdir / "a" / "test.jsonl").read_bytes() == before
    assert main(["--manifest", "a/manifest.json", "generate"]) == 1


def test_empty_impute_input_exits_2(workdir):
    assert generate("data") == 0
    header = (workdir / "data" / "test.jsonl").read_text(encoding="utf-8").splitlines()[0]
    (workdir / "empty.jsonl").write_text(header + "\n", encoding="utf-8")
    assert main(["impute", "--input", "empty.jsonl", "--baseline", "linear", "--out", "x"]) == 2


def test_layout_mismatch_exits_2(workdir, tiny_splits, tiny_link_splits, tiny_cfg):
    Imputer.build(tiny_splits.train, tiny_cfg.model).save(workdir / "queue.pt")
    write_records(workdir / "link.jsonl", tiny_link_splits.test)
    code = main(["impute", "--input", "link.jsonl", "--checkpoint", "queue.pt", "--no-enforce", "--out", "x"])
    assert code == 2


def test_baselines_impute_and_evaluate(workdir):
    assert generate("data") == 0
    assert main(["impute", "--input", "data/test.jsonl", "--baseline", "linear", "--no-enforce",
                 "--out", "lin"]) == 0
    assert main(["impute", "--input", "data/test.jsonl", "--baseline", "knn", "--train", "data/train.jsonl",
                 "--val", "data/val.jsonl", "--no-enforce", "--out", "knn"]) == 0

    imputed, header = read_records(workdir / "lin" / "imputed.jsonl")
    truth, _ = read_records(workdir / "data" / "test.jsonl")
    assert header["method"] == "linear" and not header["enforced"]
    assert [ex.example_id for ex in imputed] == sorted(ex.example_id for ex in truth)

    assert main(["evaluate", "--truth", "data/test.jsonl", "--method", "linear=lin/imputed.jsonl",
                 "--method", "knn=knn/imputed.jsonl", "--out", "report"]) == 0
    raw = pd.read_csv(workdir / "report" / "metrics_raw.csv", index_col=0)
    assert list(raw.index) == ["linear", "knn"]
    violations = pd.read_csv(workdir / "report" / "violations.csv")
    # the linear baseline keeps every periodic sample
    assert violations.set_index("method").loc["linear", "C2"] == 0.0
    assert (workdir / "report" / "manifest.json").exists()


def test_evaluate_rejects_bad_method_spec(workdir):
    assert generate("data") == 0
    assert main(["evaluate", "--truth", "data/test.jsonl", "--method", "broken", "--out", "r"]) == 1


def test_constraints_resolve_by_name(workdir, monkeypatch, tiny_splits, tiny_cfg):
    shelf = workdir / "shelf"
    shelf.mkdir()
    (shelf / "peak.cons").write_text("PEAK | measure | m[max_qlen] - max(x)\n", encoding="utf-8")
    (workdir / "local.cons").write_text("C3 | le | count_pos(x) - m[sum_sent]\n", encoding="utf-8")
    monkeypatch.setattr(Config, "CONSTRAINTS_DIR", str(shelf))

    assert constraint_path("peak") == shelf / "peak.cons"
    assert constraint_path("peak.cons") == shelf / "peak.cons"
    assert constraint_path("local.cons") == Path("local.cons")
    assert load_constraints(tiny_cfg, tiny_splits.train, "peak").names == ["PEAK"]
    assert load_constraints(tiny_cfg, tiny_splits.train, "local.cons").names == ["C3"]
    with pytest.raises(ConstraintError):
        load_constraints(tiny_cfg, tiny_splits.train, "missing")


def test_shipped_constraints_by_name_on_the_command_line(workdir):
    assert generate("data") == 0
    assert main(["impute", "--input", "data/test.jsonl", "--baseline", "linear", "--no-enforce", "--out", "lin"]) == 0
    assert main(["evaluate", "--truth", "data/test.jsonl", "--method", "linear=lin/imputed.jsonl",
                 "--constraints", "queue", "--out", "report"]) == 0
    violations = pd.read_csv(workdir / "report" / "violations.csv").set_index("method")
    assert {"C1", "C2", "C3"} <= set(violations.columns)
    manifest = json.loads((workdir / "report" / "manifest.json").read_text(encoding="utf-8"))
    assert any(name.endswith("queue.cons") for name in manifest["inputs"])
    assert main(["evaluate", "--truth", "data/test.jsonl", "--method", "linear=lin/imputed.jsonl",
                 "--constraints", "no_such_set", "--out", "bad"]) == 1


def test_train_reuses_stored_classes(workdir):
    assert generate("data") == 0
    write_class_sidecar(workdir / "stored.json", [[1, 0]], {"source": "hand"})
    assert main(["--config", "run.yaml", "train", "--data", "data", "--classes", "stored.json", "--out", "kal"]) == 0
    assert read_class_sidecar(workdir / "kal" / "classes.json") == [[0, 1]]
    manifest = json.loads((workdir / "kal" / "manifest.json").read_text(encoding="utf-8"))
    assert "stored.json" in manifest["inputs"]
    assert manifest["refine"] is True
    assert Imputer.load(workdir / "kal" / "model.pt").refined

    # resuming picks up the classes written next to the checkpoint
    assert main(["--config", "run.yaml", "train", "--data", "data", "--refine", "--resume", "kal/model.pt",
                 "--out", "more"]) == 0
    manifest = json.loads((workdir / "more" / "manifest.json").read_text(encoding="utf-8"))
    assert str(Path("kal") / "classes.json") in manifest["inputs"]
    assert read_class_sidecar(workdir / "more" / "classes.json") == [[0, 1]]

    write_class_sidecar(workdir / "unknown.json", [[0, 10 ** 6]], {})
    assert main(["--config", "run.yaml", "train", "--data", "data", "--classes", "unknown.json", "--out", "x"]) == 2


@pytest.mark.slow
def test_train_impute_evaluate_pipeline(workdir):
    assert generate("data") == 0
    assert main(["--config", "run.yaml", "train", "--data", "data", "--mode", "kal", "--refine", "--out", "kal"]) == 0
    assert main(["--config", "run.yaml", "train", "--data", "data", "--mode", "plain", "--out", "plain"]) == 0
    history = pd.read_csv(workdir / "kal" / "violation_history.csv")
    assert len(history) == 1
    assert (workdir / "kal" / "classes.json").exists()

    assert main(["--config", "run.yaml", "impute", "--input", "data/test.jsonl", "--checkpoint", "kal/model.pt",
                 "--enforce", "--out", "kal_cem"]) == 0
    report = pd.read_csv(workdir / "kal_cem" / "repair_report.csv")
    assert not report["infeasible"].any()
    assert main(["impute", "--input", "data/test.jsonl", "--checkpoint", "plain/model.pt", "--no-enforce",
                 "--out", "plain_out"]) == 0

    assert main(["evaluate", "--truth", "data/test.jsonl", "--method", "kal+cem=kal_cem/imputed.jsonl",
                 "--method", "plain=plain_out/imputed.jsonl", "--plots", "--out", "report"]) == 0
    violations = pd.read_csv(workdir / "report" / "violations.csv").set_index("method")
    assert violations.loc["kal+cem"].max() <= 1e-6
    assert (workdir / "report" / "overlay.png").exists()


@pytest.mark.slow
def test_sweep(workdir):
    assert main(["--config", "run.yaml", "sweep", "--presets", "presets.yaml", "--zooms", "10", "--out", "sweep"]) == 0
    metrics = pd.read_csv(workdir / "sweep" / "sweep_metrics.csv")
    assert set(metrics["method"]) == {"kal+cem", "plain", "knn", "linear"}
    assert (metrics["zoom"] == 10).all()
