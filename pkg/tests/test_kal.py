# -*- coding: utf-8 -*-
from dataclasses import replace

import numpy as np
import pytest
import torch

from telezoom.config import KalConfig
from telezoom.constraints import ConstraintSet, library_for_case
from telezoom.errors import DataError, TrainingError
from telezoom.kal import KalState, fit, l_aug, mean_violation, residual_scales, update_multipliers
from telezoom.model import Imputer, l_combine
from telezoom.series import Domain

from conftest import queue_window


@pytest.fixture
def c1_only():
    return ConstraintSet([library_for_case("queue")["C1"]])


@pytest.fixture
def pair():
    return [
        queue_window([0, 3, 2, 0, 1, 1, 0, 0], [1, 2, 2, 0, 1, 1, 1, 0], 4, example_id=0),
        queue_window([4, 4, 3, 2, 1, 0, 0, 0], [2, 2, 2, 2, 1, 0, 0, 0], 4, example_id=1),
    ]


def test_multiplier_update_arithmetic():
    cset = library_for_case("queue")
    kal = KalState.initial(cset, n_examples=2, n_intervals=2, mu0=0.1, mu_mult=2.0)
    kal = replace(kal, lambda_ineq=np.full((1, 2, 2), 0.05))
    phi = np.array([[[1.0, -2.0], [0.0, 0.5]], [[0.0, 0.0], [1.0, 1.0]]])
    psi = np.array([[[1.0, -3.0], [0.0, 0.2]]])

    new = update_multipliers(kal, phi, psi)
    assert new.mu == pytest.approx(0.2)
    assert np.allclose(new.lambda_eq, 0.2 * phi)
    assert np.allclose(new.lambda_ineq, [[[0.25, 0.0], [0.05, 0.09]]])
    assert new.outer_iter == 1
    assert len(new.violation_history) == 1
    # the input state is left alone
    assert kal.mu == 0.1 and kal.outer_iter == 0


def test_first_update_from_default_state():
    cset = library_for_case("queue")
    kal = KalState.initial(cset, n_examples=2, n_intervals=3)
    phi = np.arange(12, dtype=np.float64).reshape(2, 2, 3) - 5.0
    psi = np.array([[[0.4, -0.4, 0.0], [-2.0, 3.0, 0.1]]])

    new = update_multipliers(kal, phi, psi)
    assert kal.mu == 1e-3
    assert new.mu == pytest.approx(1.5e-3)
    # the step uses the coefficient the residuals were trained under
    assert np.array_equal(new.lambda_eq, 2 * 1e-3 * phi)
    assert np.array_equal(new.lambda_ineq, np.maximum(0.0, 2 * 1e-3 * psi))
    assert new.lambda_ineq[0, 0, 1] == 0.0 and new.lambda_ineq[0, 1, 0] == 0.0


def test_inequality_multipliers_never_negative(rng):
    cset = library_for_case("link")
    kal = KalState.initial(cset, 3, 4, mu0=0.5)
    for _ in range(5):
        kal = update_multipliers(kal, rng.normal(size=kal.lambda_eq.shape), rng.normal(size=kal.lambda_ineq.shape))
        assert np.all(kal.lambda_ineq >= 0)
    assert kal.mu == pytest.approx(0.5 * 1.5 ** 5)


def test_state_payload_round_trip():
    kal = KalState.initial(library_for_case("link"), 4, 3)
    kal = update_multipliers(kal, np.ones(kal.lambda_eq.shape), np.ones(kal.lambda_ineq.shape), 0.3, {"C4": 0.1})
    back = KalState.from_payload(kal.to_payload())
    assert back.mu == kal.mu and back.outer_iter == 1
    assert np.array_equal(back.lambda_eq, kal.lambda_eq)
    assert back.violation_history == [0.3]
    assert back.constraint_history == [{"C4": 0.1}]


def test_nonpositive_mu_rejected():
    with pytest.raises(TrainingError):
        KalState.initial(library_for_case("queue"), 1, 1, mu0=0.0)


def test_check_compatible(c1_only):
    kal = KalState.initial(c1_only, 2, 2)
    kal.check_compatible(c1_only, 2, 2)
    with pytest.raises(TrainingError, match="constraint set"):
        kal.check_compatible(library_for_case("queue"), 2, 2)
    with pytest.raises(TrainingError, match="windows"):
        kal.check_compatible(c1_only, 3, 2)


def test_l_aug_matches_hand_computation(pair, c1_only):
    kal = KalState.initial(c1_only, 2, 2, mu0=0.1)
    kal = replace(kal, lambda_eq=np.array([[[0.5, 0.0], [0.0, -1.0]]]))
    out = torch.tensor([[0, 1, 1, 0, 2, 0, 0, 0], [1, 1, 1, 1, 1, 1, 1, 1]], dtype=torch.float64)

    got = l_aug(out, pair, c1_only, kal, emd_weight=0.0)

    truth = torch.tensor(np.stack([ex.target.values for ex in pair]))
    base = l_combine(out, truth, 0.0)
    maxima = np.array([[3.0, 1.0], [4.0, 1.0]])
    phi = maxima - out.numpy().reshape(2, 2, 4).max(axis=-1)
    penalty = (0.1 * phi ** 2 + kal.lambda_eq[0] * phi).sum()
    assert got.item() == pytest.approx(base.item() + penalty)


def test_l_aug_uses_example_ids_for_multipliers(pair, c1_only):
    kal = KalState.initial(c1_only, 2, 2, mu0=0.1)
    kal = replace(kal, lambda_eq=np.array([[[0.0, 0.0], [7.0, 7.0]]]))
    out = torch.zeros(1, 8, dtype=torch.float64)
    first = l_aug(out, pair[:1], c1_only, kal, emd_weight=0.0)
    second = l_aug(out, pair[1:], c1_only, kal, emd_weight=0.0)
    # window 1 has maxima [4, 1] and lambda 7 on both intervals
    target = torch.tensor(pair[1].target.values).unsqueeze(0)
    expected = l_combine(out, target, 0.0).item() + 0.1 * (16 + 1) + 7 * (4 + 1)
    assert second.item() == pytest.approx(expected)
    assert first.item() < second.item()


def test_l_aug_without_constraints_is_the_base_loss(pair):
    cset = ConstraintSet()
    kal = KalState.initial(cset, 2, 2)
    out = torch.rand(2, 8, dtype=torch.float64)
    truth = torch.tensor(np.stack([ex.target.values for ex in pair]))
    assert l_aug(out, pair, cset, kal).item() == pytest.approx(l_combine(out, truth, 1.0).item())


def test_l_aug_gradcheck(pair):
    cset = library_for_case("queue")
    kal = KalState.initial(cset, 2, 2, mu0=0.3)
    kal = replace(kal, lambda_eq=np.full((2, 2, 2), 0.2), lambda_ineq=np.full((1, 2, 2), 0.4))
    gen = torch.Generator().manual_seed(0)
    # distinct values keep max/sort away from ties
    out = (torch.rand(2, 8, generator=gen, dtype=torch.float64) * 3 + 0.5).requires_grad_()
    assert torch.autograd.gradcheck(
        lambda o: l_aug(o, pair, cset, kal, sharpness=2.0, domain=Domain.NONNEG_INT), (out,)
    )


def test_residual_scales(pair, c1_only):
    scales = residual_scales(c1_only, pair, Domain.NONNEG_INT)
    assert scales["C1"] == pytest.approx(np.mean([3, 1, 4, 1]))
    assert residual_scales(ConstraintSet(), pair) == {}


def test_plain_fit_runs_one_outer_iteration(tiny_splits, tiny_cfg):
    model = Imputer.build(tiny_splits.train, tiny_cfg.model)
    result = fit(tiny_splits.train, ConstraintSet(), model, tiny_cfg, val=tiny_splits.val, mode="plain")
    assert result.state.outer_iter == 1
    assert len(result.history) == 1
    assert result.model.trained and result.model.mode == "plain"


def test_kal_without_constraints_is_plain_training(tiny_splits, tiny_cfg):
    runs = {}
    for mode in ("plain", "kal"):
        model = Imputer.build(tiny_splits.train, tiny_cfg.model)
        runs[mode] = fit(tiny_splits.train, ConstraintSet(), model, tiny_cfg, val=tiny_splits.val, mode=mode)
    plain, kal = runs["plain"].model.net.state_dict(), runs["kal"].model.net.state_dict()
    assert plain.keys() == kal.keys()
    assert all(torch.equal(plain[k], kal[k]) for k in plain)
    assert runs["plain"].history["val_loss"].tolist() == runs["kal"].history["val_loss"].tolist()


def test_kal_fit_records_history(tiny_splits, tiny_cfg):
    cset = library_for_case("queue")
    model = Imputer.build(tiny_splits.train, tiny_cfg.model)
    result = fit(tiny_splits.train, cset, model, tiny_cfg, val=tiny_splits.val)
    state = result.state
    assert 1 <= state.outer_iter <= tiny_cfg.kal.max_outer
    assert len(result.history) == state.outer_iter == len(state.violation_history)
    assert state.mu == pytest.approx(tiny_cfg.kal.mu0 * tiny_cfg.kal.mu_mult ** state.outer_iter)
    assert np.all(state.lambda_ineq >= 0)
    assert {"viol_C1", "viol_C2", "viol_C3"} <= set(result.history.columns)
    # the kept parameters are the lowest-violation ones
    best, _ = mean_violation(result.model, tiny_splits.val, cset, state.residual_scales)
    assert best == pytest.approx(min(state.violation_history), rel=1e-5)
    assert result.model.kal_state["outer_iter"] == state.outer_iter


def test_warm_start_continues_counting(tiny_splits, tiny_cfg):
    cset = library_for_case("queue")
    cfg = replace(tiny_cfg, kal=replace(tiny_cfg.kal, max_outer=1))
    first = fit(tiny_splits.train, cset, Imputer.build(tiny_splits.train, cfg.model), cfg)
    again = fit(tiny_splits.train, cset, first.model, cfg, warm_start=first.state)
    assert again.state.outer_iter == first.state.outer_iter + 1
    assert again.state.mu == pytest.approx(first.state.mu * cfg.kal.mu_mult)


def test_divergence_raises_training_error(tiny_splits, tiny_cfg):
    cset = library_for_case("queue")
    bad = KalState.initial(cset, len(tiny_splits.train), tiny_splits.train.context_len, mu0=float("inf"))
    model = Imputer.build(tiny_splits.train, tiny_cfg.model)
    with pytest.raises(TrainingError) as info:
        fit(tiny_splits.train, cset, model, tiny_cfg, warm_start=bad)
    assert info.value.outer_iter == 0
    assert info.value.exit_code == 3


def test_fit_rejects_bad_ids(tiny_splits, tiny_cfg):
    shifted = tiny_splits.train.with_examples([replace(ex, example_id=ex.example_id + 5)
                                               for ex in tiny_splits.train])
    with pytest.raises(DataError):
        fit(shifted, ConstraintSet(), Imputer.build(tiny_splits.train, tiny_cfg.model), tiny_cfg)


@pytest.mark.slow
def test_kal_lowers_violations_against_plain(tiny_splits, tiny_cfg):
    cset = library_for_case("queue")
    cfg = replace(tiny_cfg, train=replace(tiny_cfg.train, epochs=15, patience=5), kal=KalConfig())
    plain = fit(tiny_splits.train, ConstraintSet(), Imputer.build(tiny_splits.train, cfg.model), cfg,
                val=tiny_splits.val, mode="plain").model
    result = fit(tiny_splits.train, cset, Imputer.build(tiny_splits.train, cfg.model), cfg, val=tiny_splits.val)

    scales = residual_scales(cset, tiny_splits.train.examples, Domain.NONNEG_INT)
    plain_v, plain_per = mean_violation(plain, tiny_splits.test, cset, scales)
    kal_v, kal_per = mean_violation(result.model, tiny_splits.test, cset, scales)
    assert kal_v < plain_v
    assert kal_per["C1"] <= 0.6 * plain_per["C1"]

    history = result.state.violation_history
    rises = sum(later > earlier for earlier, later in zip(history, history[1:]))
    assert rises <= 1
