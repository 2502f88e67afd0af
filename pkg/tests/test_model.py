# -*- coding: utf-8 -*-
from dataclasses import replace

import numpy as np
import pytest
import torch
from scipy.optimize import linprog
from scipy.stats import wasserstein_distance

from telezoom.errors import LayoutError, ShapeError
from telezoom.model import Imputer, emd, emd_loss, l_combine, l_combine_min, mse
from telezoom.series import CoarseBundle, Domain


def emd_by_transport(a, b):
    """Balanced transport between two equal-size empirical distributions"""
    n = len(a)
    cost = np.abs(np.subtract.outer(a, b)).reshape(-1)
    rows = np.kron(np.eye(n), np.ones(n))
    cols = np.tile(np.eye(n), n)
    res = linprog(cost, A_eq=np.vstack([rows, cols]), b_eq=np.full(2 * n, 1.0 / n), bounds=(0, None))
    return res.fun


def test_emd_matches_scipy(rng):
    for _ in range(5):
        a, b = rng.exponential(2.0, 12), rng.exponential(3.0, 12)
        assert emd(a, b) == pytest.approx(wasserstein_distance(a, b), abs=1e-12)
        assert emd(a, b) == pytest.approx(emd_by_transport(a, b), abs=1e-7)


def test_emd_ignores_order_mse_does_not():
    a = np.array([0.0, 5.0, 0.0, 0.0])
    shifted = np.roll(a, 2)
    assert emd(a, shifted) == 0.0
    assert mse(a, shifted) == pytest.approx(12.5)


def test_length_mismatch():
    with pytest.raises(ShapeError):
        emd([1, 2], [1, 2, 3])
    with pytest.raises(ShapeError):
        l_combine(torch.zeros(2, 3), torch.zeros(2, 4))


def test_l_combine_weights():
    out = torch.tensor([[0.0, 2.0]])
    target = torch.tensor([[2.0, 0.0]])
    assert l_combine(out, target, emd_weight=0.0).item() == pytest.approx(4.0)
    assert l_combine(out, target, emd_weight=3.0).item() == pytest.approx(4.0)
    with pytest.raises(ValueError):
        l_combine(out, target, emd_weight=-1.0)


def test_emd_loss_gradcheck():
    out = torch.tensor([[0.3, 1.7, 0.9, 2.4]], dtype=torch.float64, requires_grad=True)
    target = torch.tensor([[1.0, 0.0, 2.0, 0.5]], dtype=torch.float64)
    assert torch.autograd.gradcheck(lambda o: emd_loss(o, target), (out,))
    assert torch.autograd.gradcheck(lambda o: l_combine(o, target, 0.7), (out,))


def test_l_combine_min_picks_best_candidate():
    out = torch.tensor([[1.0, 1.0]], requires_grad=True)
    candidates = torch.tensor([[[5.0, 5.0], [1.0, 2.0], [1.0, 2.0]]])
    loss = l_combine_min(out, candidates, emd_weight=0.0)
    assert loss.item() == pytest.approx(0.5)
    loss.sum().backward()
    assert out.grad.tolist() == [[0.0, -1.0]]


@pytest.fixture
def model(tiny_splits, tiny_cfg):
    return Imputer.build(tiny_splits.train, tiny_cfg.model)


def test_predict_shape_and_nonnegativity(model, tiny_splits):
    bundles = [ex.input for ex in tiny_splits.val]
    out = model.predict(bundles)
    assert out.shape == (len(bundles), 30)
    assert np.all(out >= 0)
    series = model.forward(bundles[0])
    assert series.domain is Domain.NONNEG_REAL and len(series) == 30
    assert model.predict([]).shape == (0, 30)


def test_same_seed_same_weights(tiny_splits, tiny_cfg):
    a = Imputer.build(tiny_splits.train, tiny_cfg.model)
    b = Imputer.build(tiny_splits.train, tiny_cfg.model)
    bundles = [ex.input for ex in tiny_splits.val]
    assert np.array_equal(a.predict(bundles), b.predict(bundles))


def test_layout_mismatch_is_rejected(model, tiny_splits):
    bundle = tiny_splits.val.examples[0].input
    with pytest.raises(LayoutError, match="sum_drop"):
        model.predict([CoarseBundle(bundle.entries[:-1], bundle.context_len, bundle.zoom)])
    extra = replace(bundle.entries[-1], channel="extra")
    with pytest.raises(LayoutError, match="extra"):
        model.predict([CoarseBundle(bundle.entries + (extra,), bundle.context_len, bundle.zoom)])


def test_layout_order_does_not_matter(model, tiny_splits):
    bundle = tiny_splits.val.examples[0].input
    shuffled = CoarseBundle(tuple(reversed(bundle.entries)), bundle.context_len, bundle.zoom)
    assert np.array_equal(model.predict([bundle]), model.predict([shuffled]))


def test_checkpoint_round_trip(tmp_path, model, tiny_splits):
    model.mode, model.trained = "plain", True
    path = model.save(tmp_path / "model.pt")
    loaded = Imputer.load(path)
    bundles = [ex.input for ex in tiny_splits.val]
    assert np.allclose(model.predict(bundles), loaded.predict(bundles))
    assert loaded.layout == model.layout and loaded.mode == "plain" and loaded.trained
    assert loaded.domain is Domain.NONNEG_INT


def test_build_from_empty_dataset(tiny_splits, tiny_cfg):
    with pytest.raises(ShapeError):
        Imputer.build(tiny_splits.train.with_examples([]), tiny_cfg.model)
