# -*- coding: utf-8 -*-
"""
📈 Series Core
Fine-grained series, coarse bundles, and the coarsening operators
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from telezoom.errors import ShapeError, DataError

logger = logging.getLogger(__name__)

REAL_POSITIVE_EPS = 1e-6


class Domain(str, Enum):
    NONNEG_REAL = "nonneg_real"
    NONNEG_INT = "nonneg_int"


class CoarsenerKind(str, Enum):
    MAX = "max"
    MIN = "min"
    MEAN = "mean"
    SUM = "sum"
    PERIODIC = "periodic"
    COUNT_POSITIVE = "count_positive"


def positive_threshold(domain: Domain) -> float:
    """Smallest value counted as strictly positive in a domain"""
    return 1.0 if Domain(domain) is Domain.NONNEG_INT else REAL_POSITIVE_EPS


# ═══════════════════════════════════════════════════════════════
# 📦 DOMAIN TYPES
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class FineSeries:
    """One fine-grained channel (ground truth or imputed)"""

    channel: str
    values: np.ndarray
    granularity_ms: float = 1.0
    domain: Domain = Domain.NONNEG_REAL

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size == 0:
            raise DataError(f"Series '{self.channel}' is empty")
        if not np.all(np.isfinite(values)):
            raise DataError(f"Series '{self.channel}' has non-finite values")
        if np.any(values < 0):
            raise DataError(f"Series '{self.channel}' has negative values at {np.flatnonzero(values < 0)[:5].tolist()}")
        domain = Domain(self.domain)
        if domain is Domain.NONNEG_INT and np.any(values != np.round(values)):
            raise DataError(f"Series '{self.channel}' is integer-valued but has fractional values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "domain", domain)

    def __len__(self) -> int:
        return int(self.values.size)

    def window(self, start: int, length: int) -> "FineSeries":
        return replace(self, values=self.values[start:start + length])

    def with_values(self, values) -> "FineSeries":
        return replace(self, values=values)


@dataclass(frozen=True)
class CoarsenerSpec:
    """A monitoring operator S applied over Z fine steps"""

    kind: CoarsenerKind
    window: int
    offset: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", CoarsenerKind(self.kind))
        if self.window < 2:
            raise ShapeError(f"Zoom-in factor must be >= 2, got {self.window}")
        if self.kind is CoarsenerKind.PERIODIC and not 0 <= self.offset < self.window:
            raise ShapeError(f"Periodic offset {self.offset} outside [0, {self.window})")


@dataclass(frozen=True, eq=False)
class CoarseEntry:
    channel: str
    spec: CoarsenerSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def name(self) -> str:
        """Measurement name used by constraints, e.g. max_qlen"""
        return measurement_name(self.channel, self.spec.kind)


def measurement_name(channel: str, kind: CoarsenerKind) -> str:
    return f"{CoarsenerKind(kind).value}_{channel}"


@dataclass(frozen=True, eq=False)
class CoarseBundle:
    """Aligned coarse measurements for one context window"""

    entries: Tuple[CoarseEntry, ...]
    context_len: int
    zoom: int

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise DataError(f"Duplicate coarse entries: {names}")
        for e in entries:
            if len(e.values) != self.context_len:
                raise ShapeError(f"Entry {e.name} has {len(e.values)} values, expected {self.context_len}")
            if e.spec.window != self.zoom:
                raise ShapeError(f"Entry {e.name} uses Z={e.spec.window}, bundle uses Z={self.zoom}")

    @property
    def layout(self) -> List[str]:
        return [e.name for e in self.entries]

    def entry(self, name: str) -> CoarseEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def get(self, name: str) -> np.ndarray:
        return self.entry(name).values

    def as_matrix(self, layout: Optional[Sequence[str]] = None) -> np.ndarray:
        """[context_len, entries] matrix in the requested layout order"""
        names = list(layout) if layout is not None else self.layout
        return np.stack([np.asarray(self.get(n), dtype=np.float64) for n in names], axis=1)


@dataclass(frozen=True, eq=False)
class WindowExample:
    """(T_s, T_r) training pair plus side scalars"""

    example_id: int
    input: CoarseBundle
    target: Optional[FineSeries]
    scalars: Mapping[str, float] = field(default_factory=dict)
    source: str = ""
    start: int = 0
    class_targets: Tuple[FineSeries, ...] = ()
    setting: str = "seen"

    def __post_init__(self):
        if self.target is not None and len(self.target) != self.input.context_len * self.input.zoom:
            raise ShapeError(
                f"Window {self.example_id}: target length {len(self.target)} != "
                f"{self.input.context_len} x {self.input.zoom}"
            )

    @property
    def candidate_targets(self) -> Tuple[FineSeries, ...]:
        if self.class_targets:
            return self.class_targets
        return (self.target,) if self.target is not None else ()


@dataclass
class WindowDataset:
    """One split of windows plus the header every record file carries"""

    examples: List[WindowExample]
    zoom: int
    context_len: int
    target: str
    domain: Domain = Domain.NONNEG_REAL
    granularity_ms: float = 1.0
    case: str = "custom"
    layout: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.domain = Domain(self.domain)
        if not self.layout and self.examples:
            self.layout = self.examples[0].input.layout
        for ex in self.examples:
            if ex.input.zoom != self.zoom or ex.input.context_len != self.context_len:
                raise ShapeError(
                    f"Window {ex.example_id} is {ex.input.context_len}x{ex.input.zoom}, "
                    f"dataset is {self.context_len}x{self.zoom}"
                )
            if ex.input.layout != self.layout:
                raise ShapeError(f"Window {ex.example_id} layout {ex.input.layout} != {self.layout}")

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def scalar_names(self) -> List[str]:
        names = set()
        for ex in self.examples:
            names.update(ex.scalars)
        return sorted(names)

    @property
    def kinds(self) -> Dict[str, CoarsenerKind]:
        if not self.examples:
            return {}
        return {e.name: e.spec.kind for e in self.examples[0].input.entries}

    def with_examples(self, examples: Sequence[WindowExample]) -> "WindowDataset":
        return replace(self, examples=list(examples))


# ═══════════════════════════════════════════════════════════════
# 🔽 COARSENING
# ═══════════════════════════════════════════════════════════════

def coarsen_values(values: np.ndarray, spec: CoarsenerSpec, domain: Domain = Domain.NONNEG_REAL) -> np.ndarray:
    """Apply S to a raw fine array (last axis)"""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[-1]
    if n % spec.window:
        raise ShapeError(f"Series length {n} is not a multiple of Z={spec.window}")
    blocks = values.reshape(values.shape[:-1] + (n // spec.window, spec.window))

    if spec.kind is CoarsenerKind.MAX:
        return blocks.max(axis=-1)
    if spec.kind is CoarsenerKind.MIN:
        return blocks.min(axis=-1)
    if spec.kind is CoarsenerKind.MEAN:
        return blocks.mean(axis=-1)
    if spec.kind is CoarsenerKind.SUM:
        return blocks.sum(axis=-1)
    if spec.kind is CoarsenerKind.PERIODIC:
        return blocks[..., spec.offset].copy()
    return (blocks >= positive_threshold(domain)).sum(axis=-1).astype(np.float64)


def coarsen(series: FineSeries, spec: CoarsenerSpec) -> np.ndarray:
    """S(series): one coarse value per Z fine steps"""
    return coarsen_values(series.values, spec, series.domain)


def upsample(coarse: Sequence[float], zoom: int) -> np.ndarray:
    """Repeat each coarse value Z times"""
    return np.repeat(np.asarray(coarse, dtype=np.float64), zoom)


def sample_indices(context_len: int, spec: CoarsenerSpec) -> np.ndarray:
    """Fine indices read by a periodic coarsener"""
    return np.arange(context_len) * spec.window + spec.offset


# ═══════════════════════════════════════════════════════════════
# 🪟 WINDOWING
# ═══════════════════════════════════════════════════════════════

MeasurementSpec = Tuple[str, CoarsenerSpec]


def window_count(length: int, window: int, stride: int) -> int:
    if length < window:
        return 0
    return (length - window) // stride + 1


def make_windows(
    channels: Mapping[str, FineSeries],
    specs: Sequence[MeasurementSpec],
    target: str,
    context_len: int,
    stride: int,
    *,
    source: str = "",
    first_id: int = 0,
    scalar_fn: Optional[Callable[[Dict[str, np.ndarray]], Dict[str, float]]] = None,
) -> List[WindowExample]:
    """
    Slice aligned channels into WindowExamples

    Args:
        channels: fine series keyed by channel name, all equal length
        specs: (channel, CoarsenerSpec) pairs; all share one Z
        target: channel the model imputes
        context_len: coarse intervals per window (N_c)
        stride: fine steps between window starts
        scalar_fn: optional per-window side scalars derived from the fine slices
    """
    if not specs:
        raise DataError("At least one coarsener spec is required")
    if target not in channels:
        raise DataError(f"Target channel '{target}' not among {sorted(channels)}")
    zooms = {spec.window for _, spec in specs}
    if len(zooms) != 1:
        raise ShapeError(f"Coarsener specs disagree on Z: {sorted(zooms)}")
    zoom = zooms.pop()
    lengths = {name: len(s) for name, s in channels.items()}
    if len(set(lengths.values())) != 1:
        raise ShapeError(f"Channels have unequal lengths: {lengths}")
    grans = {s.granularity_ms for s in channels.values()}
    if len(grans) != 1:
        raise ShapeError(f"Channels have mixed granularity: {sorted(grans)}")
    for channel, _ in specs:
        if channel not in channels:
            raise DataError(f"Coarsener references unknown channel '{channel}'")
    if stride < 1 or context_len < 1:
        raise ShapeError("stride and context_len must be >= 1")

    length = next(iter(lengths.values()))
    span = context_len * zoom
    examples = []
    for k in range(window_count(length, span, stride)):
        start = k * stride
        slices = {name: s.values[start:start + span] for name, s in channels.items()}
        entries = tuple(
            CoarseEntry(channel, spec, coarsen_values(slices[channel], spec, channels[channel].domain))
            for channel, spec in specs
        )
        examples.append(WindowExample(
            example_id=first_id + k,
            input=CoarseBundle(entries, context_len, zoom),
            target=channels[target].window(start, span),
            scalars=scalar_fn(slices) if scalar_fn else {},
            source=source,
            start=start,
        ))
    return examples


def is_self_consistent(example: WindowExample, channels: Mapping[str, FineSeries]) -> bool:
    """Re-coarsen the source slices and compare with the stored entries"""
    span = example.input.context_len * example.input.zoom
    for entry in example.input.entries:
        fine = channels[entry.channel].window(example.start, span)
        if not np.array_equal(coarsen(fine, entry.spec), entry.values):
            return False
    return True
