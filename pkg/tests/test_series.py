# -*- coding: utf-8 -*-
import numpy as np
import pytest

from telezoom.errors import DataError, ShapeError
from telezoom.series import (
    CoarseBundle,
    CoarseEntry,
    CoarsenerKind,
    CoarsenerSpec,
    Domain,
    FineSeries,
    coarsen,
    coarsen_values,
    make_windows,
    sample_indices,
    upsample,
)

from conftest import queue_window


def test_coarsen_max_and_periodic():
    values = np.array([0, 3, 1, 2, 5, 4, 1, 0, 0])
    s = FineSeries("qlen", values, domain=Domain.NONNEG_INT)
    assert coarsen(s, CoarsenerSpec("max", 3)).tolist() == [3, 5, 1]
    assert coarsen(s, CoarsenerSpec("periodic", 3, 2)).tolist() == [1, 4, 0]
    assert coarsen(s, CoarsenerSpec("periodic", 3)).tolist() == [0, 2, 1]


def test_coarsen_sum_mean_min():
    values = np.arange(6, dtype=float)
    assert coarsen_values(values, CoarsenerSpec("sum", 2)).tolist() == [1, 5, 9]
    assert coarsen_values(values, CoarsenerSpec("mean", 3)).tolist() == [1, 4]
    assert coarsen_values(values, CoarsenerSpec("min", 3)).tolist() == [0, 3]


def test_count_positive_uses_domain_threshold():
    values = np.array([0.0, 5e-7, 2e-6, 0.0])
    assert coarsen_values(values, CoarsenerSpec("count_positive", 4)).tolist() == [1]
    ints = np.array([0, 1, 2, 0])
    assert coarsen_values(ints, CoarsenerSpec("count_positive", 2), Domain.NONNEG_INT).tolist() == [1, 1]


def test_coarsen_rejects_ragged_length():
    with pytest.raises(ShapeError):
        coarsen_values(np.zeros(7), CoarsenerSpec("max", 3))


@pytest.mark.parametrize("window,offset", [(1, 0), (3, 3), (3, -1)])
def test_spec_validation(window, offset):
    with pytest.raises(ShapeError):
        CoarsenerSpec("periodic", window, offset)


def test_fine_series_validation():
    with pytest.raises(DataError):
        FineSeries("q", [])
    with pytest.raises(DataError):
        FineSeries("q", [1.0, -1.0])
    with pytest.raises(DataError):
        FineSeries("q", [1.0, np.nan])
    with pytest.raises(DataError):
        FineSeries("q", [1.5], domain=Domain.NONNEG_INT)


def test_fine_series_is_read_only():
    s = FineSeries("q", [1.0, 2.0])
    with pytest.raises(ValueError):
        s.values[0] = 3.0


def test_upsample_and_sample_indices():
    assert upsample([1, 2], 3).tolist() == [1, 1, 1, 2, 2, 2]
    assert sample_indices(3, CoarsenerSpec("periodic", 4, 1)).tolist() == [1, 5, 9]


def test_bundle_checks_shapes():
    spec = CoarsenerSpec(CoarsenerKind.MAX, 5)
    with pytest.raises(ShapeError):
        CoarseBundle((CoarseEntry("q", spec, [1, 2]),), context_len=3, zoom=5)
    with pytest.raises(ShapeError):
        CoarseBundle((CoarseEntry("q", spec, [1, 2, 3]),), context_len=3, zoom=4)
    with pytest.raises(DataError):
        CoarseBundle((CoarseEntry("q", spec, [1, 2, 3]), CoarseEntry("q", spec, [1, 2, 3])),
                     context_len=3, zoom=5)


def test_bundle_layout_and_matrix():
    ex = queue_window([0, 2, 1, 3, 0, 0], [1, 1, 1, 1, 0, 0], 3)
    bundle = ex.input
    assert bundle.layout == ["max_qlen", "periodic_qlen", "sum_sent"]
    assert bundle.get("max_qlen").tolist() == [2, 3]
    assert bundle.as_matrix().shape == (2, 3)
    assert bundle.as_matrix(["sum_sent"]).tolist() == [[3], [1]]


def test_make_windows_strides_and_ids():
    n = 40
    channels = {
        "q": FineSeries("q", np.arange(n) % 7, domain=Domain.NONNEG_INT),
        "s": FineSeries("s", np.ones(n), domain=Domain.NONNEG_INT),
    }
    specs = [("q", CoarsenerSpec("max", 5)), ("s", CoarsenerSpec("sum", 5))]
    examples = make_windows(channels, specs, "q", 2, 5, first_id=100, source="t#0")
    assert len(examples) == (n - 10) // 5 + 1
    assert [ex.example_id for ex in examples[:3]] == [100, 101, 102]
    assert [ex.start for ex in examples[:3]] == [0, 5, 10]
    second = examples[1]
    assert second.target.values.tolist() == (np.arange(5, 15) % 7).tolist()
    assert second.input.get("sum_s").tolist() == [5, 5]
    assert second.source == "t#0"


def test_make_windows_rejects_mixed_zoom_and_lengths():
    channels = {"q": FineSeries("q", np.zeros(20)), "s": FineSeries("s", np.zeros(20))}
    with pytest.raises(ShapeError):
        make_windows(channels, [("q", CoarsenerSpec("max", 5)), ("s", CoarsenerSpec("sum", 4))], "q", 2, 10)
    with pytest.raises(ShapeError):
        make_windows({"q": FineSeries("q", np.zeros(20)), "s": FineSeries("s", np.zeros(19))},
                     [("q", CoarsenerSpec("max", 5))], "q", 2, 10)
    with pytest.raises(DataError):
        make_windows(channels, [("q", CoarsenerSpec("max", 5))], "missing", 2, 10)


def test_too_short_series_gives_no_windows():
    channels = {"q": FineSeries("q", np.zeros(8))}
    assert make_windows(channels, [("q", CoarsenerSpec("max", 4))], "q", 3, 4) == []
