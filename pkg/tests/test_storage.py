# -*- coding: utf-8 -*-
import json

import numpy as np
import pytest
import torch

from telezoom.errors import CheckpointError, DataError
from telezoom.storage import (
    atomic_write_text,
    dumps_records,
    load_checkpoint,
    read_class_sidecar,
    read_header,
    read_records,
    save_checkpoint,
    write_class_sidecar,
    write_coarse_csv,
    write_records,
)


def test_records_survive_a_round_trip(tmp_path, tiny_splits):
    ds = tiny_splits.test
    path = write_records(tmp_path / "test.jsonl", ds, {"split": "test"})
    back, header = read_records(path)
    assert header["split"] == "test"
    assert header["zoom"] == ds.zoom and header["layout"] == ds.layout
    assert len(back) == len(ds)
    assert back.domain is ds.domain and back.case == ds.case
    for a, b in zip(ds, back):
        assert a.example_id == b.example_id and a.setting == b.setting
        assert np.array_equal(a.target.values, b.target.values)
        assert np.array_equal(a.input.as_matrix(), b.input.as_matrix())
        assert dict(a.scalars) == dict(b.scalars)


def test_record_bytes_are_deterministic(tiny_splits):
    assert dumps_records(tiny_splits.val) == dumps_records(tiny_splits.val)


def test_header_is_checked(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text('{"record": "window"}\n', encoding="utf-8")
    with pytest.raises(DataError, match="header"):
        read_header(path)
    path.write_text('{"record": "header", "format_version": 99}\n', encoding="utf-8")
    with pytest.raises(DataError, match="version"):
        read_header(path)
    path.write_text("", encoding="utf-8")
    with pytest.raises(DataError, match="empty"):
        read_header(path)
    with pytest.raises(DataError):
        read_header(tmp_path / "missing.jsonl")


def test_bad_window_line_reports_line_number(tmp_path, tiny_splits):
    path = write_records(tmp_path / "v.jsonl", tiny_splits.val)
    lines = path.read_text(encoding="utf-8").splitlines()
    record = json.loads(lines[2])
    del record["entries"]["max_qlen"]
    lines[2] = json.dumps(record)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(DataError, match=":3:"):
        read_records(path)


def test_coarse_csv_has_one_row_per_interval(tmp_path, tiny_splits):
    ds = tiny_splits.val
    path = write_coarse_csv(tmp_path / "coarse.csv", ds)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# granularity_ms=1.0 zoom=10"
    assert lines[1] == "id,interval," + ",".join(ds.layout)
    assert len(lines) == 2 + len(ds) * ds.context_len


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write_text(tmp_path / "sub" / "a.txt", "one")
    atomic_write_text(tmp_path / "sub" / "a.txt", "two")
    assert (tmp_path / "sub" / "a.txt").read_text(encoding="utf-8") == "two"
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["a.txt"]


def test_checkpoint_magic_and_version(tmp_path):
    path = save_checkpoint(tmp_path / "m.pt", {"weights": torch.ones(2)})
    assert torch.equal(load_checkpoint(path)["weights"], torch.ones(2))

    torch.save({"weights": torch.ones(2)}, tmp_path / "plain.pt")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "plain.pt")

    (tmp_path / "junk.pt").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.pt")

    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "missing.pt")


def test_checkpoint_version_mismatch(tmp_path):
    torch.save({"magic": "TELEZOOM-CKPT", "version": 0}, tmp_path / "old.pt")
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "old.pt")


def test_class_sidecar(tmp_path):
    path = write_class_sidecar(tmp_path / "classes.json", [[3, 1], [2]], {"theta_far": 0.5})
    assert read_class_sidecar(path) == [[1, 3], [2]]
    assert json.loads(path.read_text(encoding="utf-8"))["theta_far"] == 0.5
