# -*- coding: utf-8 -*-
"""
🧠 Imputation Model
Encoder-only transformer over coarse steps, plus the MSE / EMD / combined losses
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import torch
from torch import nn

from telezoom.config import ModelConfig, config
from telezoom.errors import CheckpointError, LayoutError, ShapeError
from telezoom.series import CoarseBundle, CoarsenerKind, Domain, FineSeries, WindowDataset, WindowExample
from telezoom.storage import load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

ArrayLike = Union[FineSeries, np.ndarray, Sequence[float]]


# ═══════════════════════════════════════════════════════════════
# 📏 LOSSES
# ═══════════════════════════════════════════════════════════════

def _pair(a: ArrayLike, b: ArrayLike):
    a = np.asarray(a.values if isinstance(a, FineSeries) else a, dtype=np.float64)
    b = np.asarray(b.values if isinstance(b, FineSeries) else b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"Length mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    return a, b


def mse(a: ArrayLike, b: ArrayLike) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def emd(a: ArrayLike, b: ArrayLike) -> float:
    """1-D earth mover's distance between value distributions: mean |sort(a) - sort(b)|"""
    a, b = _pair(a, b)
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


def mse_loss(out: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-window MSE over the last axis"""
    return ((out - target) ** 2).mean(dim=-1)


def emd_loss(out: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-window sorted-value EMD; the backward pass follows the forward sort permutation"""
    return (torch.sort(out, dim=-1).values - torch.sort(target, dim=-1).values).abs().mean(dim=-1)


def l_combine(out: torch.Tensor, target: torch.Tensor, emd_weight: float = 1.0, reduction: str = "mean") -> torch.Tensor:
    if emd_weight < 0:
        raise ValueError(f"emd_weight must be >= 0, got {emd_weight}")
    if out.shape != target.shape:
        raise ShapeError(f"Length mismatch: {tuple(out.shape)} vs {tuple(target.shape)}")
    loss = mse_loss(out, target)
    if emd_weight:
        loss = loss + emd_weight * emd_loss(out, target)
    return loss.mean() if reduction == "mean" else loss


# ═══════════════════════════════════════════════════════════════
# 🏗️ NETWORK
# ═══════════════════════════════════════════════════════════════

class ImputationNet(nn.Module):
    """Coarse tokens [B, N_c, E] -> fine values [B, N_c * Z] (normalized units)"""

    def __init__(self, n_entries: int, context_len: int, zoom: int, cfg: ModelConfig):
        super().__init__()
        self.context_len, self.zoom = context_len, zoom
        self.embed = nn.Linear(n_entries, cfg.width)
        self.position = nn.Parameter(torch.zeros(1, context_len, cfg.width))
        nn.init.normal_(self.position, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=cfg.width,
            nhead=cfg.heads,
            dim_feedforward=cfg.ff_width,
            dropout=cfg.dropout,
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=cfg.layers, enable_nested_tensor=False)
        self.head = nn.Linear(cfg.width, zoom)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        hidden = self.encoder(self.embed(tokens) + self.position)
        return self.head(hidden).reshape(tokens.shape[0], self.context_len * self.zoom)


@dataclass
class Normalizer:
    """Affine per-entry input statistics and a pure scale for the target"""

    input_mean: List[float]
    input_std: List[float]
    target_scale: float

    @classmethod
    def fit(cls, dataset: WindowDataset) -> "Normalizer":
        inputs = np.concatenate([ex.input.as_matrix(dataset.layout) for ex in dataset.examples])
        targets = np.concatenate([ex.target.values for ex in dataset.examples if ex.target is not None])
        std = inputs.std(axis=0)
        std[std < 1e-12] = 1.0
        scale = float(targets.std()) if targets.size else 1.0
        return cls(inputs.mean(axis=0).tolist(), std.tolist(), scale if scale > 1e-12 else 1.0)


class Imputer:
    """Network plus everything needed to apply it to coarse bundles"""

    def __init__(
        self,
        cfg: ModelConfig,
        layout: Sequence[str],
        kinds: Mapping[str, CoarsenerKind],
        context_len: int,
        zoom: int,
        normalizer: Normalizer,
        *,
        target: str = "target",
        domain: Domain = Domain.NONNEG_REAL,
        granularity_ms: float = 1.0,
    ):
        self.cfg = cfg
        self.layout = list(layout)
        self.kinds = {k: CoarsenerKind(v) for k, v in kinds.items()}
        self.context_len, self.zoom = context_len, zoom
        self.normalizer = normalizer
        self.target, self.domain, self.granularity_ms = target, Domain(domain), granularity_ms
        self.device = torch.device(config.DEVICE)
        self.mode = "untrained"
        self.trained = False
        self.refined = False
        self.kal_state: Optional[Dict[str, Any]] = None

        torch.manual_seed(cfg.seed)
        self.net = ImputationNet(len(self.layout), context_len, zoom, cfg).to(self.device)
        self._mean = torch.tensor(normalizer.input_mean, dtype=torch.float32, device=self.device)
        self._std = torch.tensor(normalizer.input_std, dtype=torch.float32, device=self.device)

    @classmethod
    def build(cls, dataset: WindowDataset, cfg: ModelConfig) -> "Imputer":
        if not dataset.examples:
            raise ShapeError("Cannot build a model from an empty dataset")
        return cls(
            cfg, dataset.layout, dataset.kinds, dataset.context_len, dataset.zoom,
            Normalizer.fit(dataset), target=dataset.target, domain=dataset.domain,
            granularity_ms=dataset.granularity_ms,
        )

    @property
    def width(self) -> int:
        return self.context_len * self.zoom

    @property
    def target_scale(self) -> float:
        return self.normalizer.target_scale

    def check_layout(self, bundle: CoarseBundle) -> None:
        if bundle.zoom != self.zoom or bundle.context_len != self.context_len:
            raise LayoutError(
                f"Input is {bundle.context_len}x{bundle.zoom}, model expects {self.context_len}x{self.zoom}"
            )
        names = set(bundle.layout)
        for name in self.layout:
            if name not in names:
                raise LayoutError(f"Input is missing coarse entry '{name}'")
        extra = sorted(names - set(self.layout))
        if extra:
            raise LayoutError(f"Input has coarse entry '{extra[0]}' the model was not trained on")

    # ───────────────────────────────────────────────
    # tensors
    # ───────────────────────────────────────────────

    def encode(self, bundles: Sequence[CoarseBundle]) -> torch.Tensor:
        for b in bundles:
            self.check_layout(b)
        raw = torch.tensor(np.stack([b.as_matrix(self.layout) for b in bundles]), dtype=torch.float32,
                           device=self.device)
        return (raw - self._mean) / self._std

    def scale_targets(self, values: np.ndarray) -> torch.Tensor:
        return torch.tensor(np.asarray(values) / self.target_scale, dtype=torch.float32, device=self.device)

    def to_physical(self, out: torch.Tensor) -> torch.Tensor:
        return out * self.target_scale

    # ───────────────────────────────────────────────
    # inference
    # ───────────────────────────────────────────────

    def predict(self, bundles: Sequence[CoarseBundle], batch_size: int = 256) -> np.ndarray:
        """Physical-unit outputs [B, N_c * Z], clamped at 0"""
        if not bundles:
            return np.zeros((0, self.width))
        self.net.eval()
        chunks = []
        with torch.no_grad():
            for i in range(0, len(bundles), batch_size):
                out = self.to_physical(self.net(self.encode(bundles[i:i + batch_size])))
                chunks.append(torch.clamp(out, min=0.0).double().cpu().numpy())
        return np.concatenate(chunks)

    def forward(self, bundle: CoarseBundle) -> FineSeries:
        """Imputed target series for one bundle; integer rounding is left to CEM"""
        values = self.predict([bundle])[0]
        return FineSeries(self.target, values, self.granularity_ms, Domain.NONNEG_REAL)

    def impute(self, examples: Sequence[WindowExample], batch_size: int = 256) -> List[FineSeries]:
        values = self.predict([ex.input for ex in examples], batch_size)
        return [FineSeries(self.target, v, self.granularity_ms, Domain.NONNEG_REAL) for v in values]

    # ───────────────────────────────────────────────
    # persistence
    # ───────────────────────────────────────────────

    def save(self, path: Union[str, Path]) -> Path:
        return save_checkpoint(path, {
            "state_dict": {k: v.detach().cpu() for k, v in self.net.state_dict().items()},
            "model_config": asdict(self.cfg),
            "normalizer": asdict(self.normalizer),
            "layout": list(self.layout),
            "kinds": {k: v.value for k, v in self.kinds.items()},
            "context_len": self.context_len,
            "zoom": self.zoom,
            "target": self.target,
            "domain": self.domain.value,
            "granularity_ms": float(self.granularity_ms),
            "mode": self.mode,
            "trained": self.trained,
            "refined": self.refined,
            "kal_state": self.kal_state,
        })

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Imputer":
        payload = load_checkpoint(path)
        try:
            model = cls(
                ModelConfig(**payload["model_config"]),
                payload["layout"],
                payload["kinds"],
                int(payload["context_len"]),
                int(payload["zoom"]),
                Normalizer(**payload["normalizer"]),
                target=payload["target"],
                domain=payload["domain"],
                granularity_ms=payload["granularity_ms"],
            )
            model.net.load_state_dict(payload["state_dict"])
        except (KeyError, TypeError, RuntimeError) as e:
            raise CheckpointError(f"{path}: incompatible checkpoint contents: {e}") from e
        model.mode = payload.get("mode", "untrained")
        model.trained = bool(payload.get("trained", False))
        model.refined = bool(payload.get("refined", False))
        model.kal_state = payload.get("kal_state")
        logger.info(f"✅ Loaded {model.mode} checkpoint {path} (trained={model.trained})")
        return model


def l_combine_min(out: torch.Tensor, candidates: torch.Tensor, emd_weight: float = 1.0) -> torch.Tensor:
    """
    Per-window min over candidate targets [B, K, W] of l_combine

    Gradient reaches only the argmin candidate; padding a row with repeats of
    its own candidates leaves the minimum unchanged.
    """
    expanded = out.unsqueeze(1).expand_as(candidates)
    losses = l_combine(expanded, candidates, emd_weight, reduction="none")
    return losses.min(dim=1).values
