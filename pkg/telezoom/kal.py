# -*- coding: utf-8 -*-
"""
⚖️ Knowledge-Augmented Training
Augmented-Lagrangian penalties over a constraint set, with the inner/outer training loops
"""

import copy
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from telezoom.config import KalConfig, RunConfig, TrainConfig
from telezoom.constraints import (
    ConstraintSet,
    build_context,
    dataset_violations,
    gather_measurements,
    residual_matrix,
)
from telezoom.errors import DataError, TrainingError
from telezoom.model import Imputer, l_combine_min
from telezoom.series import CoarsenerKind, Domain, WindowDataset, WindowExample, positive_threshold

logger = logging.getLogger(__name__)


# ═══════════════════════════════════════════════════════════════
# 📦 MULTIPLIER STATE
# ═══════════════════════════════════════════════════════════════

@dataclass
class KalState:
    """
    Penalty coefficient and per-(constraint, example, interval) multipliers

    lambda_eq is [K, N, N_c] and lambda_ineq is [H, N, N_c], indexed by
    training example id. Window-scoped constraints use interval column 0.
    """

    mu: float
    mu_mult: float
    lambda_eq: np.ndarray
    lambda_ineq: np.ndarray
    eq_names: List[str] = field(default_factory=list)
    ineq_names: List[str] = field(default_factory=list)
    outer_iter: int = 0
    violation_history: List[float] = field(default_factory=list)
    constraint_history: List[Dict[str, float]] = field(default_factory=list)
    residual_scales: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.mu <= 0:
            raise TrainingError(f"Penalty coefficient mu must be > 0, got {self.mu}")

    @classmethod
    def initial(cls, cset: ConstraintSet, n_examples: int, n_intervals: int,
                mu0: float = 1e-3, mu_mult: float = 1.5) -> "KalState":
        return cls(
            mu=mu0,
            mu_mult=mu_mult,
            lambda_eq=np.zeros((cset.K, n_examples, n_intervals)),
            lambda_ineq=np.zeros((cset.H, n_examples, n_intervals)),
            eq_names=[c.name for c in cset.equalities],
            ineq_names=[c.name for c in cset.inequalities],
        )

    @property
    def n_examples(self) -> int:
        return self.lambda_eq.shape[1] if self.lambda_eq.ndim == 3 else 0

    def zeroed(self, n_examples: int) -> "KalState":
        """Same mu, zero multipliers for a different example set (validation)"""
        n_c = self.lambda_eq.shape[2] if self.lambda_eq.ndim == 3 else self.lambda_ineq.shape[2]
        return replace(
            self,
            lambda_eq=np.zeros((len(self.eq_names), n_examples, n_c)),
            lambda_ineq=np.zeros((len(self.ineq_names), n_examples, n_c)),
        )

    def check_compatible(self, cset: ConstraintSet, n_examples: int, n_intervals: int) -> None:
        if self.eq_names != [c.name for c in cset.equalities] or self.ineq_names != [c.name for c in cset.inequalities]:
            raise TrainingError("Warm-start state was trained with a different constraint set")
        if self.lambda_eq.shape[1:] != (n_examples, n_intervals) or self.lambda_ineq.shape[1:] != (n_examples, n_intervals):
            raise TrainingError(
                f"Warm-start multipliers cover {self.lambda_eq.shape[1:]} windows/intervals, "
                f"dataset has {(n_examples, n_intervals)}"
            )

    def to_payload(self) -> Dict[str, Any]:
        return {
            "mu": float(self.mu),
            "mu_mult": float(self.mu_mult),
            "lambda_eq": torch.from_numpy(np.ascontiguousarray(self.lambda_eq)),
            "lambda_ineq": torch.from_numpy(np.ascontiguousarray(self.lambda_ineq)),
            "eq_names": list(self.eq_names),
            "ineq_names": list(self.ineq_names),
            "outer_iter": int(self.outer_iter),
            "violation_history": [float(v) for v in self.violation_history],
            "constraint_history": [dict(h) for h in self.constraint_history],
            "residual_scales": dict(self.residual_scales),
        }

    @classmethod
    def from_payload(cls, payload: Mapping[str, Any]) -> "KalState":
        return cls(
            mu=float(payload["mu"]),
            mu_mult=float(payload["mu_mult"]),
            lambda_eq=np.asarray(payload["lambda_eq"], dtype=np.float64),
            lambda_ineq=np.asarray(payload["lambda_ineq"], dtype=np.float64),
            eq_names=list(payload["eq_names"]),
            ineq_names=list(payload["ineq_names"]),
            outer_iter=int(payload["outer_iter"]),
            violation_history=list(payload["violation_history"]),
            constraint_history=list(payload.get("constraint_history", [])),
            residual_scales=dict(payload.get("residual_scales", {})),
        )


def update_multipliers(
    kal: KalState,
    phi: np.ndarray,
    psi: np.ndarray,
    violation_value: Optional[float] = None,
    per_constraint: Optional[Mapping[str, float]] = None,
) -> KalState:
    """
    One outer-loop dual step

    mu <- mu * mu_mult
    lambda_eq <- lambda_eq + 2 mu_old phi
    lambda_ineq <- max(0, lambda_ineq + 2 mu_old psi)
    """
    phi = np.asarray(phi, dtype=np.float64).reshape(kal.lambda_eq.shape)
    psi = np.asarray(psi, dtype=np.float64).reshape(kal.lambda_ineq.shape)
    mu_old = kal.mu
    if violation_value is None:
        parts = [np.abs(phi).mean()] if phi.size else []
        parts += [np.maximum(psi, 0).mean()] if psi.size else []
        violation_value = float(np.mean(parts)) if parts else 0.0
    return replace(
        kal,
        mu=mu_old * kal.mu_mult,
        lambda_eq=kal.lambda_eq + 2.0 * mu_old * phi,
        lambda_ineq=np.maximum(0.0, kal.lambda_ineq + 2.0 * mu_old * psi),
        outer_iter=kal.outer_iter + 1,
        violation_history=kal.violation_history + [float(violation_value)],
        constraint_history=kal.constraint_history + [dict(per_constraint or {})],
    )


# ═══════════════════════════════════════════════════════════════
# 🎯 OBJECTIVE
# ═══════════════════════════════════════════════════════════════

def candidate_tensor(examples: Sequence[WindowExample], target_scale: float = 1.0) -> torch.Tensor:
    """[N, K_max, W] scaled candidate targets; short rows repeat their first candidate"""
    rows = [[t.values for t in ex.candidate_targets] for ex in examples]
    missing = [ex.example_id for ex, r in zip(examples, rows) if not r]
    if missing:
        raise DataError(f"Windows without targets cannot be trained on: {missing[:5]}")
    k_max = max(len(r) for r in rows)
    stacked = np.stack([np.stack(r + [r[0]] * (k_max - len(r))) for r in rows])
    return torch.tensor(stacked / target_scale, dtype=torch.float32)


def residual_scales(
    cset: ConstraintSet,
    examples: Sequence[WindowExample],
    domain: Domain = Domain.NONNEG_REAL,
    fallback: float = 1.0,
) -> Dict[str, float]:
    """Mean |lhs(truth) - lhs(0)| over active intervals, per constraint"""
    if not len(cset) or not examples:
        return {c.name: fallback for c in cset}
    zoom = examples[0].input.zoom
    kinds = {e.name: e.spec.kind for e in examples[0].input.entries}
    measurements, scalars = gather_measurements(examples)
    truth = torch.tensor(np.stack([ex.target.values for ex in examples]), dtype=torch.float64)
    zeros = torch.zeros_like(truth)
    threshold = positive_threshold(domain)
    scales = {}
    with torch.no_grad():
        for c in cset:
            diff = (
                residual_matrix(c, truth, measurements, scalars, zoom=zoom, kinds=kinds, threshold=threshold)
                - residual_matrix(c, zeros, measurements, scalars, zoom=zoom, kinds=kinds, threshold=threshold)
            ).abs()
            ctx = build_context(c, truth, measurements, scalars, zoom=zoom, kinds=kinds, threshold=threshold)
            active = c.active(ctx)
            diff = diff[..., :active.shape[-1]]
            value = float(diff[active].mean()) if active.any() else 0.0
            scales[c.name] = value if value > 1e-9 else fallback
    return scales


class KalObjective:
    """L_aug over a fixed example set, evaluated on minibatches of it"""

    def __init__(
        self,
        examples: Sequence[WindowExample],
        cset: ConstraintSet,
        *,
        emd_weight: float = 1.0,
        sharpness: float = 50.0,
        target_scale: float = 1.0,
        domain: Domain = Domain.NONNEG_REAL,
        scales: Optional[Mapping[str, float]] = None,
    ):
        if not examples:
            raise DataError("Objective needs at least one example")
        self.examples = list(examples)
        self.cset = cset
        self.emd_weight, self.sharpness = emd_weight, sharpness
        self.target_scale = target_scale
        self.zoom = examples[0].input.zoom
        self.n_intervals = examples[0].input.context_len
        self.kinds: Dict[str, CoarsenerKind] = {e.name: e.spec.kind for e in examples[0].input.entries}
        self.threshold = positive_threshold(domain)
        # the smoothed step needs a unit gap; integer counts already have one
        self.value_scale = 1.0 if Domain(domain) is Domain.NONNEG_INT else target_scale
        self.scales = dict(scales or {c.name: 1.0 for c in cset})
        self.measurements, self.scalars = gather_measurements(self.examples, dtype=torch.float32)
        self.candidates = candidate_tensor(self.examples, target_scale)

    def __len__(self) -> int:
        return len(self.examples)

    def _stack(self, constraints, x, meas, scal) -> torch.Tensor:
        if not constraints:
            return x.new_zeros((0, x.shape[0], self.n_intervals))
        return torch.stack([
            residual_matrix(c, x, meas, scal, zoom=self.zoom, kinds=self.kinds, sharpness=self.sharpness,
                            threshold=self.threshold, value_scale=self.value_scale) / self.scales[c.name]
            for c in constraints
        ])

    def residuals(self, out: torch.Tensor, idx: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Smoothed, scale-normalized residuals phi [K, B, N_c] and psi [H, B, N_c]"""
        x = out * self.target_scale
        meas = {k: v[idx] for k, v in self.measurements.items()}
        scal = {k: v[idx] for k, v in self.scalars.items()}
        return self._stack(self.cset.equalities, x, meas, scal), self._stack(self.cset.inequalities, x, meas, scal)

    def base(self, out: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
        candidates = self.candidates[idx].to(device=out.device, dtype=out.dtype)
        return l_combine_min(out, candidates, self.emd_weight).mean()

    def l_aug(self, out: torch.Tensor, idx: torch.Tensor, kal: KalState, n_total: Optional[int] = None) -> torch.Tensor:
        """
        L_combine + sum mu phi^2 + lambda_eq phi + lambda_ineq psi + mu [lambda_ineq > 0 or psi > 0] psi^2

        Penalty sums are scaled by n_total / batch so a minibatch estimates the full-set sum.
        """
        loss = self.base(out, idx)
        if not len(self.cset):
            return loss
        phi, psi = self.residuals(out, idx)
        rows = idx.cpu().numpy()
        lam_eq = torch.as_tensor(kal.lambda_eq[:, rows], dtype=out.dtype, device=out.device)
        lam_ineq = torch.as_tensor(kal.lambda_ineq[:, rows], dtype=out.dtype, device=out.device)
        with torch.no_grad():
            gate = ((lam_ineq > 0) | (psi > 0)).to(out.dtype)
        penalty = (kal.mu * phi ** 2 + lam_eq * phi).sum() + (lam_ineq * psi + kal.mu * gate * psi ** 2).sum()
        factor = (n_total or len(self)) / out.shape[0]
        return loss + factor * penalty


def l_aug(
    out: torch.Tensor,
    examples: Sequence[WindowExample],
    constraint_set: ConstraintSet,
    kal: KalState,
    *,
    emd_weight: float = 1.0,
    sharpness: float = 50.0,
    target_scale: float = 1.0,
    domain: Domain = Domain.NONNEG_REAL,
    scales: Optional[Mapping[str, float]] = None,
) -> torch.Tensor:
    """L_aug for outputs (normalized units) of `examples`, whose ids index kal's multipliers"""
    objective = KalObjective(examples, constraint_set, emd_weight=emd_weight, sharpness=sharpness,
                             target_scale=target_scale, domain=domain, scales=scales)
    # multipliers are keyed by example id, measurements by position
    ids = np.array([ex.example_id for ex in examples], dtype=np.int64)
    kal_view = replace(kal, lambda_eq=kal.lambda_eq[:, ids], lambda_ineq=kal.lambda_ineq[:, ids])
    return objective.l_aug(out, torch.arange(len(examples)), kal_view)


# ═══════════════════════════════════════════════════════════════
# 🔄 TRAINING LOOPS
# ═══════════════════════════════════════════════════════════════

@dataclass
class FitResult:
    model: Imputer
    state: KalState
    history: pd.DataFrame


def _batched_outputs(model: Imputer, objective: KalObjective, batch_size: int):
    model.net.eval()
    with torch.no_grad():
        tokens = model.encode([ex.input for ex in objective.examples])
        for i in range(0, len(objective), batch_size):
            idx = torch.arange(i, min(i + batch_size, len(objective)))
            yield idx, model.net(tokens[idx])


def _validation_loss(model: Imputer, objective: KalObjective, kal: KalState, batch_size: int) -> float:
    total = 0.0
    for idx, out in _batched_outputs(model, objective, batch_size):
        total += float(objective.l_aug(out, idx, kal)) * len(idx)
    return total / len(objective)


def _smoothed_residuals(model: Imputer, objective: KalObjective, batch_size: int):
    phis, psis = [], []
    for idx, out in _batched_outputs(model, objective, batch_size):
        phi, psi = objective.residuals(out, idx)
        phis.append(phi.double().cpu().numpy())
        psis.append(psi.double().cpu().numpy())
    return np.concatenate(phis, axis=1), np.concatenate(psis, axis=1)


def mean_violation(
    model: Imputer,
    dataset: WindowDataset,
    cset: ConstraintSet,
    scales: Mapping[str, float],
) -> Tuple[float, Dict[str, float]]:
    """Exact mean violation, normalized per constraint, on model outputs"""
    if not len(cset) or not len(dataset):
        return 0.0, {}
    outputs = model.predict([ex.input for ex in dataset.examples])
    table = dataset_violations(cset, outputs, dataset.examples, model.domain)
    per = {name: float(v.mean()) / scales.get(name, 1.0) for name, v in table.items()}
    return float(np.mean(list(per.values()))), per


def _inner_loop(
    model: Imputer,
    objective: KalObjective,
    val_objective: Optional[KalObjective],
    kal: KalState,
    cfg: TrainConfig,
    optimizer: torch.optim.Optimizer,
    generator: torch.Generator,
) -> Tuple[float, int]:
    """Adam epochs on L_aug until validation L_aug stops improving for `patience` epochs"""
    tokens = model.encode([ex.input for ex in objective.examples])
    val_kal = kal.zeroed(len(val_objective)) if val_objective is not None else None
    best, best_state, stale, epoch = float("inf"), None, 0, 0
    for epoch in range(1, cfg.epochs + 1):
        model.net.train()
        order = torch.randperm(len(objective), generator=generator)
        for start in range(0, len(objective), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss = objective.l_aug(model.net(tokens[idx]), idx, kal)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"Loss diverged ({float(loss)}) at outer iteration {kal.outer_iter}, epoch {epoch}",
                    outer_iter=kal.outer_iter,
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

        if val_objective is not None:
            score = _validation_loss(model, val_objective, val_kal, cfg.batch_size)
        else:
            score = _validation_loss(model, objective, kal, cfg.batch_size)
        if score < best:
            best, best_state, stale = score, copy.deepcopy(model.net.state_dict()), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if best_state is not None:
        model.net.load_state_dict(best_state)
    return best, epoch


def fit(
    train: WindowDataset,
    constraint_set: ConstraintSet,
    model: Imputer,
    cfg: RunConfig,
    *,
    val: Optional[WindowDataset] = None,
    warm_start: Optional[KalState] = None,
    mode: str = "kal",
) -> FitResult:
    """
    Alternate inner training on L_aug with multiplier updates

    Stops when the exact mean violation improves by less than saturation_tol
    (relative), after max_outer outer iterations, or after one iteration when
    the constraint set is empty. The model comes back with the parameters that
    had the lowest exact violation.
    """
    kcfg: KalConfig = cfg.kal
    tcfg: TrainConfig = cfg.train
    if not len(train):
        raise DataError("Training split is empty")
    for ex in train.examples:
        if ex.example_id >= len(train) or ex.example_id < 0:
            raise DataError(f"Training ids must be 0..N-1, found {ex.example_id}")
    train_examples = sorted(train.examples, key=lambda ex: ex.example_id)
    val = val if val is not None and len(val) else None

    fallback = model.target_scale
    scales = residual_scales(constraint_set, train_examples, model.domain, fallback)
    if warm_start is not None:
        warm_start.check_compatible(constraint_set, len(train), train.context_len)
        state = warm_start
        scales = dict(state.residual_scales) or scales
    else:
        state = KalState.initial(constraint_set, len(train), train.context_len, kcfg.mu0, kcfg.mu_mult)
        state.residual_scales = scales

    common = dict(emd_weight=tcfg.emd_weight, sharpness=kcfg.sharpness, target_scale=model.target_scale,
                  domain=model.domain, scales=scales)
    objective = KalObjective(train_examples, constraint_set, **common)
    val_objective = KalObjective(val.examples, constraint_set, **common) if val is not None else None
    report_on = val if val is not None else train

    torch.manual_seed(model.cfg.seed)
    generator = torch.Generator().manual_seed(model.cfg.seed)
    optimizer = torch.optim.Adam(model.net.parameters(), lr=tcfg.lr)

    rows: List[Dict[str, Any]] = []
    best_violation, best_params, previous = float("inf"), None, None
    outer_budget = 1 if not len(constraint_set) else kcfg.max_outer
    logger.info(
        f"🔄 Training {mode}: {len(train)} windows, K={constraint_set.K}, H={constraint_set.H}, "
        f"mu0={state.mu:g}"
    )
    for _ in range(outer_budget):
        try:
            val_loss, epochs = _inner_loop(model, objective, val_objective, state, tcfg, optimizer, generator)
        except TrainingError:
            logger.error(f"❌ Training diverged at outer iteration {state.outer_iter}", exc_info=True)
            raise

        current, per = mean_violation(model, report_on, constraint_set, scales)
        if len(constraint_set):
            phi, psi = _smoothed_residuals(model, objective, tcfg.batch_size)
            state = update_multipliers(state, phi, psi, current, per)
        else:
            state = replace(state, outer_iter=state.outer_iter + 1,
                            violation_history=state.violation_history + [current])
        rows.append({"outer_iter": state.outer_iter, "mu": state.mu, "violation": current,
                     "val_loss": val_loss, "epochs": epochs, **{f"viol_{k}": v for k, v in per.items()}})
        logger.info(f"✅ Outer {state.outer_iter}: violation={current:.6g} val_l_aug={val_loss:.6g} ({epochs} epochs)")

        if current < best_violation:
            best_violation, best_params = current, copy.deepcopy(model.net.state_dict())
        if previous is not None:
            if previous <= 1e-12 or (previous - current) / previous < kcfg.saturation_tol:
                logger.info(f"✅ Violations saturated after {state.outer_iter} outer iterations")
                break
        previous = current

    if best_params is not None:
        model.net.load_state_dict(best_params)
    model.mode, model.trained = mode, True
    model.kal_state = state.to_payload()
    return FitResult(model, state, pd.DataFrame(rows))
