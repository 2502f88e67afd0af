# -*- coding: utf-8 -*-
"""
🚦 Synthetic Telemetry Generator
Single-queue traffic simulation, dataset splits, and CSV ingestion
"""

import logging
import math
from collections.abc import Mapping as MappingABC
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from telezoom.config import config
from telezoom.errors import ConfigError, DataError
from telezoom.series import (
    CoarsenerKind,
    CoarsenerSpec,
    Domain,
    FineSeries,
    MeasurementSpec,
    WindowDataset,
    WindowExample,
    make_windows,
)
from telezoom.storage import atomic_write_text
from telezoom.utils.workers import run_pool

logger = logging.getLogger(__name__)

QUEUE_CHANNELS = ("qlen", "sent", "drop")
LINK_CHANNELS = ("util", "retransmit", "congestion", "connections")
CHANNEL_DOMAINS = {
    "qlen": Domain.NONNEG_INT,
    "sent": Domain.NONNEG_INT,
    "drop": Domain.NONNEG_INT,
    "connections": Domain.NONNEG_INT,
    "util": Domain.NONNEG_REAL,
    "retransmit": Domain.NONNEG_REAL,
    "congestion": Domain.NONNEG_REAL,
}
CASE_TARGETS = {"queue": "qlen", "link": "util"}


# ═══════════════════════════════════════════════════════════════
# 🎛️ TRAFFIC CONFIGURATION
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class TrafficConfig:
    """Traffic pattern for one simulated port (rates in packets/ms)"""

    name: str = "default"
    duration_ms: int = 20000
    service_rate: int = 4
    capacity: int = 200
    background_load: float = 0.3
    burst_rate: float = 12.0
    burst_duration_ms: Tuple[int, int] = (5, 40)
    burst_gap_ms: Tuple[int, int] = (150, 600)
    packet_bytes: int = 1500
    retransmit_prob: float = 0.01
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "burst_duration_ms", tuple(int(v) for v in self.burst_duration_ms))
        object.__setattr__(self, "burst_gap_ms", tuple(int(v) for v in self.burst_gap_ms))
        if self.duration_ms < 1:
            raise ConfigError(f"{self.name}: duration_ms must be >= 1")
        if int(self.service_rate) != self.service_rate or self.service_rate < 1:
            raise ConfigError(f"{self.name}: service_rate must be a positive integer (packets/ms)")
        if self.capacity <= 0:
            raise ConfigError(f"{self.name}: capacity B must be > 0")
        if not 0.0 <= self.background_load <= 1.0:
            raise ConfigError(f"{self.name}: background_load must be in [0, 1]")
        if self.burst_rate <= self.service_rate:
            raise ConfigError(f"{self.name}: burst_rate {self.burst_rate} must exceed service_rate {self.service_rate}")
        lo, hi = self.burst_duration_ms
        if not 0 <= lo <= hi:
            raise ConfigError(f"{self.name}: burst_duration_ms must satisfy 0 <= min <= max")
        glo, ghi = self.burst_gap_ms
        if not 1 <= glo <= ghi:
            raise ConfigError(f"{self.name}: burst_gap_ms must satisfy 1 <= min <= max")
        if not 0.0 <= self.retransmit_prob <= 1.0:
            raise ConfigError(f"{self.name}: retransmit_prob must be in [0, 1]")

    @property
    def bursts_enabled(self) -> bool:
        return self.burst_duration_ms[1] > 0

    @classmethod
    def from_dict(cls, data: Mapping) -> "TrafficConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown traffic config keys: {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass(frozen=True)
class Preset:
    name: str
    configs: Tuple[TrafficConfig, ...]
    held_out: Tuple[TrafficConfig, ...] = ()


def load_presets(path: Optional[Union[str, Path]] = None) -> Dict[str, Preset]:
    path = Path(path or config.PRESETS_FILE)
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except FileNotFoundError as e:
        raise ConfigError(f"Preset file not found: {path}") from e

    presets = {}
    for name, body in data.items():
        if not body or not body.get("configs"):
            raise ConfigError(f"Preset '{name}' lists no configs")
        presets[name] = Preset(
            name=name,
            configs=tuple(TrafficConfig.from_dict(c) for c in body["configs"]),
            held_out=tuple(TrafficConfig.from_dict(c) for c in body.get("held_out", [])),
        )
    return presets


def load_preset(name: str, path: Optional[Union[str, Path]] = None) -> Preset:
    presets = load_presets(path)
    if name not in presets:
        raise ConfigError(f"Unknown preset '{name}' (available: {', '.join(sorted(presets))})")
    return presets[name]


# ═══════════════════════════════════════════════════════════════
# 🔁 SIMULATION
# ═══════════════════════════════════════════════════════════════

@dataclass(eq=False)
class Trace(MappingABC):
    """Simulated channels for one trace plus the generator's own burst log"""

    config: TrafficConfig
    trace_idx: int
    channels: Dict[str, FineSeries]
    bursts: List[Tuple[int, int]] = field(default_factory=list)
    arrivals: Optional[np.ndarray] = None
    rtt_factor: float = 1.0

    def __getitem__(self, key: str) -> FineSeries:
        return self.channels[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self.channels)

    def __len__(self) -> int:
        return len(self.channels)

    @property
    def source(self) -> str:
        return f"{self.config.name}#{self.trace_idx}"


def _burst_schedule(rng: np.random.Generator, cfg: TrafficConfig) -> List[Tuple[int, int]]:
    """ON intervals [start, end) with uniform durations and gaps"""
    if not cfg.bursts_enabled:
        return []
    lo, hi = cfg.burst_duration_ms
    glo, ghi = cfg.burst_gap_ms
    bursts = []
    t = int(rng.integers(glo, ghi + 1))
    while t < cfg.duration_ms:
        end = min(t + int(rng.integers(max(lo, 1), hi + 1)), cfg.duration_ms)
        bursts.append((t, end))
        t = end + int(rng.integers(glo, ghi + 1))
    return bursts


def simulate(cfg: TrafficConfig, trace_idx: int = 0) -> Trace:
    """
    Simulate one trace at 1 ms steps

    qlen[t] is the backlog at the start of step t. Per step:
    sent = min(q + a, service_rate), drop = max(0, q + a - sent - B),
    q' = q + a - sent - drop. The RNG is seeded from (cfg.seed, trace_idx).
    """
    rng = np.random.default_rng([cfg.seed, trace_idx])
    n = cfg.duration_ms
    mu, cap = int(cfg.service_rate), int(cfg.capacity)

    bursts = _burst_schedule(rng, cfg)
    on = np.zeros(n, dtype=bool)
    for start, end in bursts:
        on[start:end] = True

    arrivals = rng.poisson(cfg.background_load * mu, size=n).astype(np.int64)
    arrivals[on] += rng.poisson(cfg.burst_rate, size=int(on.sum()))

    qlen = np.zeros(n, dtype=np.int64)
    sent = np.zeros(n, dtype=np.int64)
    drop = np.zeros(n, dtype=np.int64)
    q = 0
    for t, a in enumerate(arrivals.tolist()):
        qlen[t] = q
        backlog = q + a
        s = min(backlog, mu)
        d = max(0, backlog - s - cap)
        sent[t], drop[t] = s, d
        q = backlog - s - d

    # Link view in bytes/ms
    util = sent * float(cfg.packet_bytes)
    retransmit = rng.binomial(sent, cfg.retransmit_prob) * float(cfg.packet_bytes)
    congestion = np.where(qlen >= mu, util, 0.0)
    base_flows = int(rng.integers(1, 5))
    burst_flows = int(rng.integers(2, 9))
    connections = base_flows + on.astype(np.int64) * burst_flows
    rtt_factor = float(rng.uniform(0.5, 2.0))

    raw = {
        "qlen": qlen, "sent": sent, "drop": drop,
        "util": util, "retransmit": retransmit, "congestion": congestion, "connections": connections,
    }
    channels = {name: FineSeries(name, values, 1.0, CHANNEL_DOMAINS[name]) for name, values in raw.items()}
    logger.debug(f"🔄 Simulated {cfg.name}#{trace_idx}: {len(bursts)} bursts, {int(drop.sum())} drops")
    return Trace(cfg, trace_idx, channels, bursts, arrivals, rtt_factor)


# ═══════════════════════════════════════════════════════════════
# 🧱 DATASET ASSEMBLY
# ═══════════════════════════════════════════════════════════════

def case_specs(case: str, zoom: int, periodic_offset: int = 0) -> List[MeasurementSpec]:
    """Coarse measurements monitoring tools report for a dataset case"""
    if case == "queue":
        return [
            ("qlen", CoarsenerSpec(CoarsenerKind.MAX, zoom)),
            ("qlen", CoarsenerSpec(CoarsenerKind.PERIODIC, zoom, periodic_offset)),
            ("sent", CoarsenerSpec(CoarsenerKind.SUM, zoom)),
            ("drop", CoarsenerSpec(CoarsenerKind.SUM, zoom)),
        ]
    if case == "link":
        return [
            ("util", CoarsenerSpec(CoarsenerKind.SUM, zoom)),
            ("retransmit", CoarsenerSpec(CoarsenerKind.SUM, zoom)),
            ("congestion", CoarsenerSpec(CoarsenerKind.SUM, zoom)),
            ("connections", CoarsenerSpec(CoarsenerKind.MEAN, zoom)),
        ]
    raise ConfigError(f"Unknown dataset case: {case}")


def case_scalars(case: str, trace: Trace, zoom: int, span: int):
    """Per-window side measurements, built so the case's constraints hold on ground truth"""
    cfg = trace.config
    if case == "queue":
        fixed = {"capacity": float(cfg.capacity), "service_rate": float(cfg.service_rate)}
        return lambda slices: dict(fixed)

    def link(slices: Dict[str, np.ndarray]) -> Dict[str, float]:
        sums = slices["util"].reshape(-1, zoom).sum(axis=1)
        elapsed = float(span)
        return {
            "bandwidth": float(cfg.service_rate * cfg.packet_bytes),
            "elapsed_time": elapsed,
            "RTT": round(trace.rtt_factor * span, 3),
            "MSS": float(cfg.packet_bytes),
            "SndCwnd": float(max(1, math.ceil(sums.max() / cfg.packet_bytes))),
            "RwndLimited": elapsed + 1.0 if sums.max() == 0 else 0.0,
        }

    return link


@dataclass
class DatasetSplits:
    train: WindowDataset
    val: WindowDataset
    test: WindowDataset
    bursts: Dict[str, List[Tuple[int, int]]] = field(default_factory=dict)

    def items(self):
        return (("train", self.train), ("val", self.val), ("test", self.test))


def _renumber(examples: Sequence[WindowExample], setting: Optional[str] = None) -> List[WindowExample]:
    out = []
    for i, ex in enumerate(examples):
        changes = {"example_id": i}
        if setting:
            changes["setting"] = setting
        out.append(replace(ex, **changes))
    return out


def build_dataset(
    cfgs: Sequence[TrafficConfig],
    specs: Optional[Sequence[MeasurementSpec]] = None,
    zoom: int = 50,
    context_len: int = 5,
    *,
    case: str = "queue",
    stride: Optional[int] = None,
    periodic_offset: int = 0,
    traces_per_config: int = 10,
    held_out: Sequence[TrafficConfig] = (),
    seed: int = 7,
    workers: Optional[int] = None,
) -> DatasetSplits:
    """
    Simulate traces, window them, and split 80/10/10 by trace

    Traces from held_out configs go to the test split only, tagged "unseen".
    """
    if not cfgs:
        raise ConfigError("build_dataset needs at least one traffic config")
    if case not in CASE_TARGETS:
        raise ConfigError(f"Unknown dataset case: {case}")
    specs = list(specs) if specs is not None else case_specs(case, zoom, periodic_offset)
    target = CASE_TARGETS[case]
    span = context_len * zoom
    stride = stride or span

    jobs = []
    for cfg in list(cfgs) + list(held_out):
        for _ in range(traces_per_config):
            jobs.append((replace(cfg, seed=seed), len(jobs)))
    logger.info(f"🔄 Simulating {len(jobs)} traces ({len(cfgs)} configs, {len(held_out)} held out)")
    traces = run_pool(lambda job: simulate(*job), jobs, workers)

    per_trace = []
    for trace in traces:
        channels = dict(trace.channels)
        usable = len(channels[target]) - len(channels[target]) % zoom
        if usable != len(channels[target]):
            logger.warning(
                f"⚠️ {trace.source}: dropping {len(channels[target]) - usable} trailing steps (Z={zoom})"
            )
            channels = {k: s.window(0, usable) for k, s in channels.items()}
        per_trace.append(make_windows(
            channels, specs, target, context_len, stride,
            source=trace.source, scalar_fn=case_scalars(case, trace, zoom, span),
        ))

    n_seen = len(cfgs) * traces_per_config
    order = np.random.default_rng(seed).permutation(n_seen).tolist()
    n_val = n_test = int(round(0.1 * n_seen)) if n_seen >= 3 else 0
    if n_seen >= 3:
        n_val, n_test = max(1, n_val), max(1, n_test)
    test_idx = order[:n_test]
    val_idx = order[n_test:n_test + n_val]
    train_idx = sorted(order[n_test + n_val:])

    def gather(indices):
        return [ex for i in sorted(indices) for ex in per_trace[i]]

    train = _renumber(gather(train_idx))
    val = _renumber(gather(val_idx))
    test = _renumber(
        [replace(ex, setting="seen") for ex in gather(test_idx)]
        + [replace(ex, setting="unseen") for ex in gather(range(n_seen, len(per_trace)))]
    )
    if not train:
        raise DataError(f"No training windows: traces shorter than one {span}-step window?")

    domain = CHANNEL_DOMAINS.get(target, Domain.NONNEG_REAL)

    def split(examples):
        return WindowDataset(examples, zoom, context_len, target, domain, 1.0, case,
                             layout=train[0].input.layout)

    splits = DatasetSplits(split(train), split(val), split(test),
                           bursts={t.source: t.bursts for t in traces})
    logger.info(f"✅ Dataset: {len(train)} train / {len(val)} val / {len(test)} test windows (Z={zoom})")
    return splits


def bursts_in_window(bursts: Sequence[Tuple[int, int]], start: int, span: int) -> List[Tuple[int, int]]:
    """Generator bursts clipped to [start, start + span), relative to start"""
    out = []
    for b0, b1 in bursts:
        lo, hi = max(b0, start), min(b1, start + span)
        if lo < hi:
            out.append((lo - start, hi - start))
    return out


# ═══════════════════════════════════════════════════════════════
# 📥 CSV INGESTION
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class ChannelColumn:
    column: str
    domain: Domain = Domain.NONNEG_REAL


@dataclass(frozen=True)
class IngestSchema:
    """Which CSV column feeds which channel, and the fine granularity"""

    channels: Mapping[str, ChannelColumn]
    granularity_ms: Optional[float] = None

    @classmethod
    def from_dict(cls, data: Mapping) -> "IngestSchema":
        if not data.get("channels"):
            raise ConfigError("Ingestion schema lists no channels")
        channels = {}
        for name, body in data["channels"].items():
            if isinstance(body, str):
                body = {"column": body}
            channels[name] = ChannelColumn(body.get("column", name), Domain(body.get("domain", "nonneg_real")))
        return cls(channels, data.get("granularity_ms"))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "IngestSchema":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(yaml.safe_load(fh) or {})
        except FileNotFoundError as e:
            raise ConfigError(f"Ingestion schema not found: {path}") from e


def read_granularity(path: Union[str, Path]) -> Optional[float]:
    """Granularity from a leading '# granularity_ms=...' comment, if present"""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            if key.strip() == "granularity_ms":
                return float(value)
    return None


def ingest_csv(path: Union[str, Path], schema: IngestSchema) -> Dict[str, FineSeries]:
    """Parse a wide CSV (one column per channel) into validated FineSeries"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Input file not found: {path}")
    try:
        frame = pd.read_csv(path, comment="#", float_precision="round_trip", skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise DataError(f"{path}: file is empty") from e
    except pd.errors.ParserError as e:
        raise DataError(f"{path}: ragged rows: {e}") from e
    if frame.empty:
        raise DataError(f"{path}: no data rows")

    granularity = schema.granularity_ms or read_granularity(path) or 1.0
    missing = [c.column for c in schema.channels.values() if c.column not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing} (found {list(frame.columns)})")

    series = {}
    for channel, spec in schema.channels.items():
        column = pd.to_numeric(frame[spec.column], errors="coerce")
        bad = np.flatnonzero(column.isna().to_numpy())
        if bad.size:
            raise DataError(f"{path}: data row {bad[0] + 1} has a missing or non-numeric '{spec.column}' value")
        values = column.to_numpy(dtype=np.float64)
        bad = np.flatnonzero(values < 0)
        if bad.size:
            raise DataError(f"{path}: data row {bad[0] + 1} has negative '{spec.column}' value {values[bad[0]]}")
        if spec.domain is Domain.NONNEG_INT:
            bad = np.flatnonzero(values != np.round(values))
            if bad.size:
                raise DataError(f"{path}: data row {bad[0] + 1} has fractional '{spec.column}' value {values[bad[0]]}")
        series[channel] = FineSeries(channel, values, granularity, spec.domain)
    logger.info(f"✅ Ingested {len(series)} channels x {len(frame)} steps from {path}")
    return series


def export_csv(
    channels: Mapping[str, FineSeries],
    path: Union[str, Path],
    columns: Optional[Mapping[str, str]] = None,
) -> Path:
    """Inverse of ingest_csv; integer channels are written without a decimal point"""
    if not channels:
        raise DataError("Nothing to export")
    lengths = {len(s) for s in channels.values()}
    if len(lengths) != 1:
        raise DataError(f"Channels have unequal lengths: {sorted(lengths)}")
    granularity = next(iter(channels.values())).granularity_ms
    data = {}
    for name, s in channels.items():
        values = s.values.astype(np.int64) if s.domain is Domain.NONNEG_INT else s.values
        data[(columns or {}).get(name, name)] = values
    body = pd.DataFrame(data).to_csv(index=False, lineterminator="\n")
    return atomic_write_text(path, f"# granularity_ms={granularity!r}\n{body}")
