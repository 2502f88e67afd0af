# -*- coding: utf-8 -*-
"""
📊 Evaluation Kit
Imputation metrics, burst analysis, baselines and report tables
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
import pandas as pd
from sklearn.neighbors import NearestNeighbors

from telezoom.config import RunConfig
from telezoom.constraints import ConstraintSet
from telezoom.errors import DataError, ShapeError
from telezoom.kal import fit
from telezoom.model import Imputer, emd, mse
from telezoom.series import CoarseBundle, CoarsenerKind, Domain, FineSeries, WindowDataset
from telezoom.storage import save_figure, write_frame, write_json
from telezoom.utils.workers import run_pool

logger = logging.getLogger(__name__)

DEFAULT_BURST_FRACTION = 0.5
KNN_CANDIDATES = (1, 3, 5, 10)
METRICS = ("mse", "emd", "autocorr_err", "p99_err")
BURST_PROPERTIES = ("position", "height", "frequency", "inter_arrival", "duration", "volume")

Values = Union[FineSeries, np.ndarray, Sequence[float]]


def _array(values: Values) -> np.ndarray:
    return np.asarray(values.values if isinstance(values, FineSeries) else values, dtype=np.float64).reshape(-1)


def relative_error(value: float, real: float) -> Tuple[float, bool]:
    """|t - t_real| / t_real; when t_real is 0 the absolute error is returned and flagged"""
    if real == 0:
        return abs(value - real), True
    return abs(value - real) / abs(real), False


# ═══════════════════════════════════════════════════════════════
# 💥 BURSTS
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class BurstRecord:
    start: int
    duration: int
    height: float
    volume: float


def detect_bursts(series: Values, threshold_frac: float = DEFAULT_BURST_FRACTION) -> List[BurstRecord]:
    """Maximal runs with value >= threshold_frac * max(series), ordered by start"""
    if not 0 < threshold_frac < 1:
        raise ValueError(f"threshold_frac must be in (0, 1), got {threshold_frac}")
    values = _array(series)
    peak = values.max() if values.size else 0.0
    if peak <= 0:
        return []
    above = values >= threshold_frac * peak
    edges = np.diff(np.concatenate(([0], above.astype(np.int8), [0])))
    starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    return [
        BurstRecord(int(s), int(e - s), float(values[s:e].max()), float(values[s:e].sum()))
        for s, e in zip(starts, ends)
    ]


def burst_properties(bursts: Sequence[BurstRecord]) -> Dict[str, float]:
    """Window-level summary; position and the per-burst properties are means over bursts"""
    if not bursts:
        return {p: 0.0 for p in BURST_PROPERTIES}
    starts = np.array([b.start for b in bursts], dtype=np.float64)
    return {
        "position": float(starts.mean()),
        "height": float(np.mean([b.height for b in bursts])),
        "frequency": float(len(bursts)),
        "inter_arrival": float(np.diff(starts).mean()) if len(bursts) > 1 else 0.0,
        "duration": float(np.mean([b.duration for b in bursts])),
        "volume": float(np.mean([b.volume for b in bursts])),
    }


def burst_errors(
    imputed: Values, truth: Values, threshold_frac: float = DEFAULT_BURST_FRACTION
) -> Dict[str, float]:
    """Relative error of each burst property; NaN when neither series has a burst"""
    true_bursts = detect_bursts(truth, threshold_frac)
    found = detect_bursts(imputed, threshold_frac)
    if not true_bursts and not found:
        return {p: float("nan") for p in BURST_PROPERTIES}
    real, est = burst_properties(true_bursts), burst_properties(found)
    return {p: relative_error(est[p], real[p])[0] for p in BURST_PROPERTIES}


# ═══════════════════════════════════════════════════════════════
# 📏 IMPUTATION METRICS
# ═══════════════════════════════════════════════════════════════

def lag1_autocorrelation(values: Values) -> float:
    """Lag-1 Pearson autocorrelation; 0 for constant series"""
    value = pd.Series(_array(values)).autocorr(lag=1)
    return 0.0 if pd.isna(value) else float(value)


@dataclass
class ImputationMetrics:
    mse: float
    emd: float
    autocorr_err: float
    p99_err: float
    absolute: Tuple[str, ...] = ()

    def as_dict(self) -> Dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


def imputation_metrics(imputed: Values, truth: Values) -> ImputationMetrics:
    a, b = _array(imputed), _array(truth)
    if a.shape != b.shape:
        raise ShapeError(f"Length mismatch: {a.size} vs {b.size}")
    autocorr, flag_ac = relative_error(lag1_autocorrelation(a), lag1_autocorrelation(b))
    p99, flag_p99 = relative_error(float(np.percentile(a, 99)), float(np.percentile(b, 99)))
    absolute = tuple(name for name, flagged in (("autocorr_err", flag_ac), ("p99_err", flag_p99)) if flagged)
    return ImputationMetrics(mse(a, b), emd(a, b), autocorr, p99, absolute)


def normalize_errors(table: pd.DataFrame) -> pd.DataFrame:
    """
    Per column, map the methods' errors affinely onto [0.1, 0.9]

    Rows are methods, columns metrics. A column where every method ties maps to 0.5.
    """
    if len(table.index) < 2:
        raise DataError(f"Normalization needs >= 2 methods, got {len(table.index)}")
    lo, hi = table.min(), table.max()
    span = hi - lo
    scaled = 0.1 + 0.8 * (table - lo) / span.where(span > 0)
    for column in table.columns[(span <= 0).to_numpy()]:
        scaled[column] = np.where(table[column].notna(), 0.5, np.nan)
    return scaled


# ═══════════════════════════════════════════════════════════════
# 🧮 BASELINES
# ═══════════════════════════════════════════════════════════════

class KnnBaseline:
    """Pointwise mean of the K training targets nearest in flattened coarse-input space"""

    def __init__(self, train: WindowDataset):
        examples = [ex for ex in train.examples if ex.target is not None]
        if not examples:
            raise DataError("KNN baseline needs a non-empty training set with targets")
        self.layout = list(train.layout)
        self.target, self.granularity_ms = train.target, train.granularity_ms
        self._targets = np.stack([ex.target.values for ex in examples])
        self._index = NearestNeighbors(algorithm="brute").fit(self._features([ex.input for ex in examples]))

    def __len__(self) -> int:
        return len(self._targets)

    def _features(self, bundles: Sequence[CoarseBundle]) -> np.ndarray:
        return np.stack([b.as_matrix(self.layout).reshape(-1) for b in bundles])

    def predict(self, bundles: Sequence[CoarseBundle], k: int) -> np.ndarray:
        if not 1 <= k <= len(self):
            raise ValueError(f"K must be in [1, {len(self)}], got {k}")
        _, idx = self._index.kneighbors(self._features(bundles), n_neighbors=k)
        return self._targets[idx].mean(axis=1)

    def select_k(self, val: WindowDataset, candidates: Sequence[int] = KNN_CANDIDATES) -> int:
        """K with the lowest validation MSE; candidates above the training size are skipped"""
        usable = [k for k in candidates if k <= len(self)]
        if not usable:
            raise DataError("No KNN candidate fits the training set size")
        examples = [ex for ex in val.examples if ex.target is not None]
        if not examples:
            return usable[0]
        truth = np.stack([ex.target.values for ex in examples])
        bundles = [ex.input for ex in examples]
        scores = {k: float(np.mean((self.predict(bundles, k) - truth) ** 2)) for k in usable}
        best = min(usable, key=lambda k: (scores[k], k))
        logger.info(f"✅ KNN: selected K={best} (validation MSE {scores[best]:.6g})")
        return best


def knn_baseline(train: WindowDataset, query: CoarseBundle, k: int) -> FineSeries:
    values = KnnBaseline(train).predict([query], k)[0]
    return FineSeries(train.target, values, train.granularity_ms, Domain.NONNEG_REAL)


def linear_baseline(bundle: CoarseBundle, channel: Optional[str] = None, granularity_ms: float = 1.0) -> FineSeries:
    """
    Keep periodic samples, put each interval max at the interval midpoint, interpolate the rest

    A periodic sample wins when it lands on a midpoint.
    """
    def pick(kind):
        for e in bundle.entries:
            if e.spec.kind is kind and (channel is None or e.channel == channel):
                return e
        return None

    periodic = pick(CoarsenerKind.PERIODIC)
    if periodic is None:
        raise DataError("Linear baseline needs a periodic measurement of the target channel")
    peak = next((e for e in bundle.entries
                 if e.spec.kind is CoarsenerKind.MAX and e.channel == periodic.channel), None)
    zoom, width = bundle.zoom, bundle.context_len * bundle.zoom
    known: Dict[int, float] = {}
    if peak is not None:
        known.update({k * zoom + zoom // 2: float(v) for k, v in enumerate(peak.values)})
    known.update({k * zoom + periodic.spec.offset: float(v) for k, v in enumerate(periodic.values)})
    xs = np.array(sorted(known))
    values = np.interp(np.arange(width), xs, [known[i] for i in xs])
    return FineSeries(periodic.channel, values, granularity_ms, Domain.NONNEG_REAL)


def plain_baseline(train: WindowDataset, cfg: RunConfig, val: Optional[WindowDataset] = None) -> Imputer:
    """Same network, seed and budget as the full method, trained on MSE alone"""
    mse_only = cfg.with_overrides({"train.emd_weight": 0.0})
    model = Imputer.build(train, mse_only.model)
    fit(train, ConstraintSet(), model, mse_only, val=val, mode="plain")
    return model


# ═══════════════════════════════════════════════════════════════
# 📋 REPORTS
# ═══════════════════════════════════════════════════════════════

@dataclass
class EvaluationReport:
    raw: pd.DataFrame
    bursts: pd.DataFrame
    per_window: pd.DataFrame
    by_setting: pd.DataFrame
    normalized: Optional[pd.DataFrame] = None
    notes: List[str] = field(default_factory=list)

    def summary(self) -> Dict[str, object]:
        body = {
            "raw": self.raw.to_dict(orient="index"),
            "bursts": self.bursts.to_dict(orient="index"),
            "notes": list(self.notes),
        }
        if self.normalized is not None:
            body["normalized"] = self.normalized.to_dict(orient="index")
        return body

    def write(self, out_dir: Union[str, Path], plots: bool = False) -> List[Path]:
        out_dir = Path(out_dir)
        written = [
            write_frame(out_dir / "metrics_raw.csv", self.raw.reset_index()),
            write_frame(out_dir / "bursts_raw.csv", self.bursts.reset_index()),
            write_frame(out_dir / "per_window.csv", self.per_window),
            write_frame(out_dir / "by_setting.csv", self.by_setting),
        ]
        if self.normalized is not None:
            written.append(write_frame(out_dir / "metrics_normalized.csv", self.normalized.reset_index()))
        written.append(write_json(out_dir / "report.json", _jsonable(self.summary())))
        if plots:
            table = self.normalized if self.normalized is not None else self.raw
            written.append(plot_metric_bars(table, out_dir / "metrics.png"))
        return written


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and np.isnan(obj):
        return None
    return obj


def _window_rows(method: str, outputs: np.ndarray, truth: WindowDataset, threshold_frac: float, workers):
    examples = truth.examples

    def score(i):
        ex = examples[i]
        metrics = imputation_metrics(outputs[i], ex.target)
        row = {"method": method, "id": ex.example_id, "setting": ex.setting, **metrics.as_dict(),
               "absolute": ";".join(metrics.absolute)}
        row.update({f"burst_{k}": v for k, v in burst_errors(outputs[i], ex.target, threshold_frac).items()})
        return row

    return run_pool(score, range(len(examples)), workers)


def evaluate_methods(
    outputs: Mapping[str, np.ndarray],
    truth: WindowDataset,
    *,
    threshold_frac: float = DEFAULT_BURST_FRACTION,
    workers: Optional[int] = None,
) -> EvaluationReport:
    """
    Score every method's imputed windows [N, W] against the truth windows

    Raw tables hold mean errors per method; the normalized table is produced
    only when at least two methods are present.
    """
    if not outputs:
        raise DataError("No methods to evaluate")
    if any(ex.target is None for ex in truth.examples):
        raise DataError("Truth file has windows without targets")
    width = truth.context_len * truth.zoom
    for method, values in outputs.items():
        values = np.asarray(values)
        if values.shape != (len(truth), width):
            raise ShapeError(f"Method '{method}': outputs {values.shape} do not align with truth ({len(truth)}, {width})")

    rows = []
    for method, values in outputs.items():
        rows.extend(_window_rows(method, np.asarray(values, dtype=np.float64), truth, threshold_frac, workers))
    per_window = pd.DataFrame(rows)
    order = list(outputs)
    burst_cols = [f"burst_{p}" for p in BURST_PROPERTIES]

    raw = per_window.groupby("method", sort=False)[list(METRICS)].mean().reindex(order)
    bursts = per_window.groupby("method", sort=False)[burst_cols].mean().reindex(order)
    bursts.columns = list(BURST_PROPERTIES)
    by_setting = (per_window.groupby(["method", "setting"], sort=False)[list(METRICS) + burst_cols]
                  .mean().reset_index())

    notes = []
    normalized = None
    if len(order) >= 2:
        normalized = normalize_errors(raw.join(bursts.add_prefix("burst_")))
    else:
        notes.append("single method: normalized table skipped")
        logger.warning("⚠️ Only one method evaluated, writing raw errors only")
    flagged = int((per_window["absolute"] != "").sum())
    if flagged:
        notes.append(f"{flagged} window rows report absolute errors where the true value is 0")
    logger.info(f"✅ Evaluated {len(order)} methods on {len(truth)} windows")
    return EvaluationReport(raw, bursts, per_window, by_setting, normalized, notes)


def plot_metric_bars(table: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Grouped bars: one group per metric, one bar per method"""
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(table.columns)), 4))
    n = len(table.index)
    positions = np.arange(len(table.columns))
    width = 0.8 / max(n, 1)
    for i, method in enumerate(table.index):
        ax.bar(positions + i * width, table.loc[method].to_numpy(dtype=float), width, label=str(method))
    ax.set_xticks(positions + width * (n - 1) / 2)
    ax.set_xticklabels(table.columns, rotation=30, ha="right")
    ax.legend()
    try:
        return save_figure(path, fig)
    finally:
        plt.close(fig)


def plot_overlay(truth: Values, imputed: Mapping[str, Values], path: Union[str, Path]) -> Path:
    fig, ax = plt.subplots(figsize=(9, 3))
    ax.plot(_array(truth), color="black", linewidth=1.5, label="truth")
    for name, values in imputed.items():
        ax.plot(_array(values), linewidth=1.0, label=name)
    ax.set_xlabel("fine step")
    ax.legend()
    try:
        return save_figure(path, fig)
    finally:
        plt.close(fig)
