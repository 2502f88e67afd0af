# -*- coding: utf-8 -*-
"""
📐 Constraint Language
Measurement (equality) and operational (inequality) knowledge over an imputed window

Expressions are small trees over the imputed window x restricted to one coarse
interval. One evaluator serves both uses: with sharpness=None every indicator is
exact; with a sharpness k it becomes the smoothed step 1/2 (1 + tanh(k x)).

Text format, one constraint per line (`#` starts a comment):

    name | form | expression | guard | scope

form is `measure` (measurement equality), `eq` or `le` (lhs <= 0). guard and scope
are optional; scope is `interval` (default) or `window`.

    C1 | measure | m[max_qlen] - max(x)
    C7 | le      | 0.5 * s[bandwidth] - max(x) | m[sum_congestion] > 0
"""

import ast
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np
import torch

from telezoom.errors import ConstraintError
from telezoom.series import CoarseBundle, CoarsenerKind, Domain, FineSeries, positive_threshold
from telezoom.storage import atomic_write_text

logger = logging.getLogger(__name__)

DEFAULT_SHARPNESS = 50.0
REDUCERS = ("sum", "max", "min", "mean", "count_pos")
COMPARATORS = {
    ast.Lt: "<", ast.LtE: "<=", ast.Gt: ">", ast.GtE: ">=", ast.Eq: "==", ast.NotEq: "!=",
}


class Form(str, Enum):
    EQUALITY = "eq"
    INEQUALITY = "le"


class Scope(str, Enum):
    INTERVAL = "interval"
    WINDOW = "window"


def step(x: torch.Tensor, k: float) -> torch.Tensor:
    """Smoothed step 1/2 (1 + tanh(k x))"""
    return 0.5 * (1.0 + torch.tanh(k * x))


# ═══════════════════════════════════════════════════════════════
# 🧮 EVALUATION CONTEXT
# ═══════════════════════════════════════════════════════════════

@dataclass
class EvalContext:
    """
    Tensors a constraint reads

    x: imputed values viewed as [B, intervals, steps]
    measurements: name -> [B, intervals]
    scalars: name -> [B, 1]
    """

    x: torch.Tensor
    measurements: Mapping[str, torch.Tensor]
    scalars: Mapping[str, torch.Tensor]
    sharpness: Optional[float] = None
    threshold: float = 1e-6
    value_scale: float = 1.0
    constraint: str = ""

    def const(self, value: float) -> torch.Tensor:
        return torch.as_tensor(value, dtype=self.x.dtype, device=self.x.device)


# ═══════════════════════════════════════════════════════════════
# 🌳 EXPRESSION TREE
# ═══════════════════════════════════════════════════════════════

class Expr:
    """Base expression node"""

    def evaluate(self, ctx: EvalContext) -> torch.Tensor:
        raise NotImplementedError

    def children(self) -> Tuple["Expr", ...]:
        return ()

    def walk(self) -> Iterator["Expr"]:
        yield self
        for child in self.children():
            yield from child.walk()

    @property
    def uses_x(self) -> bool:
        return any(isinstance(n, (Reduce, At)) for n in self.walk())

    @property
    def has_indicator(self) -> bool:
        return any(isinstance(n, Reduce) and n.op == "count_pos" for n in self.walk())

    def measurement_refs(self) -> Set[str]:
        return {n.name for n in self.walk() if isinstance(n, Meas)}

    def scalar_refs(self) -> Set[str]:
        return {n.name for n in self.walk() if isinstance(n, Scalar)}


@dataclass(frozen=True)
class Const(Expr):
    value: float

    def evaluate(self, ctx):
        return ctx.const(self.value)

    def __str__(self):
        return repr(float(self.value))


@dataclass(frozen=True)
class Meas(Expr):
    name: str

    def evaluate(self, ctx):
        try:
            return ctx.measurements[self.name]
        except KeyError:
            raise ConstraintError(f"Constraint {ctx.constraint}: unresolved measurement '{self.name}'") from None

    def __str__(self):
        return f"m[{self.name}]"


@dataclass(frozen=True)
class Scalar(Expr):
    name: str

    def evaluate(self, ctx):
        try:
            return ctx.scalars[self.name]
        except KeyError:
            raise ConstraintError(f"Constraint {ctx.constraint}: unresolved scalar '{self.name}'") from None

    def __str__(self):
        return f"s[{self.name}]"


@dataclass(frozen=True)
class Reduce(Expr):
    op: str

    def __post_init__(self):
        if self.op not in REDUCERS:
            raise ConstraintError(f"Unknown reducer '{self.op}'")

    def evaluate(self, ctx):
        x = ctx.x
        if self.op == "sum":
            return x.sum(dim=-1)
        if self.op == "mean":
            return x.mean(dim=-1)
        if self.op == "max":
            return x.amax(dim=-1)
        if self.op == "min":
            return x.amin(dim=-1)
        if ctx.sharpness is None:
            return (x >= ctx.threshold).to(x.dtype).sum(dim=-1)
        return step((x - 0.5 * ctx.threshold) / ctx.value_scale, ctx.sharpness).sum(dim=-1)

    def __str__(self):
        return f"{self.op}(x)"


@dataclass(frozen=True)
class At(Expr):
    offset: int

    def evaluate(self, ctx):
        if not 0 <= self.offset < ctx.x.shape[-1]:
            raise ConstraintError(
                f"Constraint {ctx.constraint}: at(x, {self.offset}) outside interval of {ctx.x.shape[-1]} steps"
            )
        return ctx.x[..., self.offset]

    def __str__(self):
        return f"at(x, {self.offset})"


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.op not in "+-*":
            raise ConstraintError(f"Unknown operator '{self.op}'")
        if self.op == "*" and self.left.uses_x and self.right.uses_x:
            raise ConstraintError(f"Product of two imputed terms is not linear: {self}")

    def children(self):
        return (self.left, self.right)

    def evaluate(self, ctx):
        a, b = self.left.evaluate(ctx), self.right.evaluate(ctx)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        return a * b

    def __str__(self):
        return f"({self.left} {self.op} {self.right})"


@dataclass(frozen=True)
class Guard:
    """Measurement-only predicate gating an implication"""

    left: Expr
    op: str
    right: Expr

    def __post_init__(self):
        if self.left.uses_x or self.right.uses_x:
            raise ConstraintError(f"Guard may not reference the imputed series: {self}")
        if self.op not in COMPARATORS.values():
            raise ConstraintError(f"Unknown comparator '{self.op}'")

    def holds(self, ctx: EvalContext) -> torch.Tensor:
        a, b = self.left.evaluate(ctx), self.right.evaluate(ctx)
        return {
            "<": torch.lt, "<=": torch.le, ">": torch.gt, ">=": torch.ge, "==": torch.eq, "!=": torch.ne,
        }[self.op](torch.as_tensor(a), torch.as_tensor(b))

    def walk(self):
        yield from self.left.walk()
        yield from self.right.walk()

    def __str__(self):
        return f"{self.left} {self.op} {self.right}"


@dataclass(frozen=True)
class Constraint:
    """Phi = 0 (equality) or Psi <= 0 (inequality), optionally guarded"""

    name: str
    form: Form
    lhs: Expr
    guard: Optional[Guard] = None
    scope: Scope = Scope.INTERVAL
    measurement: bool = False

    def __post_init__(self):
        object.__setattr__(self, "form", Form(self.form))
        object.__setattr__(self, "scope", Scope(self.scope))
        if self.measurement and self.form is not Form.EQUALITY:
            raise ConstraintError(f"Measurement constraint {self.name} must be an equality")
        if not self.lhs.uses_x:
            raise ConstraintError(f"Constraint {self.name} never reads the imputed series")

    @property
    def is_equality(self) -> bool:
        return self.form is Form.EQUALITY

    @property
    def has_indicator(self) -> bool:
        return self.lhs.has_indicator

    def measurement_refs(self) -> Set[str]:
        refs = self.lhs.measurement_refs()
        if self.guard:
            refs |= {n.name for n in self.guard.walk() if isinstance(n, Meas)}
        return refs

    def scalar_refs(self) -> Set[str]:
        refs = self.lhs.scalar_refs()
        if self.guard:
            refs |= {n.name for n in self.guard.walk() if isinstance(n, Scalar)}
        return refs

    def sample_offsets(self) -> List[int]:
        """Fine offsets pinned by a measurement constraint reading at(x, k)"""
        if not self.measurement:
            return []
        return sorted({n.offset for n in self.lhs.walk() if isinstance(n, At)})

    def residual(self, ctx: EvalContext) -> torch.Tensor:
        ctx = replace(ctx, constraint=self.name)
        value = self.lhs.evaluate(ctx)
        shape = ctx.x.shape[:-1]
        value = torch.broadcast_to(torch.as_tensor(value, dtype=ctx.x.dtype, device=ctx.x.device), shape)
        if self.guard is None:
            return value
        mask = torch.broadcast_to(self.guard.holds(ctx), shape)
        return torch.where(mask, value, torch.zeros_like(value))

    def active(self, ctx: EvalContext) -> torch.Tensor:
        """Boolean mask of intervals where the guard fires"""
        shape = ctx.x.shape[:-1]
        if self.guard is None:
            return torch.ones(shape, dtype=torch.bool, device=ctx.x.device)
        return torch.broadcast_to(self.guard.holds(replace(ctx, constraint=self.name)), shape)

    def to_line(self) -> str:
        form = "measure" if self.measurement else self.form.value
        parts = [self.name, form, str(self.lhs), str(self.guard) if self.guard else ""]
        if self.scope is not Scope.INTERVAL:
            parts.append(self.scope.value)
        return " | ".join(parts).rstrip(" |")


class ConstraintSet:
    """Ordered, uniquely named constraints"""

    def __init__(self, constraints: Iterable[Constraint] = ()):
        self.constraints: Tuple[Constraint, ...] = tuple(constraints)
        names = [c.name for c in self.constraints]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConstraintError(f"Duplicate constraint names: {', '.join(dupes)}")

    def __iter__(self):
        return iter(self.constraints)

    def __len__(self):
        return len(self.constraints)

    def __getitem__(self, name: str) -> Constraint:
        for c in self.constraints:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.constraints]

    @property
    def equalities(self) -> List[Constraint]:
        return [c for c in self.constraints if c.is_equality]

    @property
    def inequalities(self) -> List[Constraint]:
        return [c for c in self.constraints if not c.is_equality]

    @property
    def K(self) -> int:
        return len(self.equalities)

    @property
    def H(self) -> int:
        return len(self.inequalities)

    def without(self, names: Iterable[str]) -> "ConstraintSet":
        drop = set(names)
        return ConstraintSet(c for c in self.constraints if c.name not in drop)

    def check_bindings(self, measurements: Iterable[str], scalars: Iterable[str] = ()) -> None:
        """Raise naming the first reference the data layout cannot resolve"""
        measurements, scalars = set(measurements), set(scalars)
        for c in self.constraints:
            missing = sorted(c.measurement_refs() - measurements)
            if missing:
                raise ConstraintError(f"Constraint {c.name} references unknown channel measurement '{missing[0]}'")
            missing = sorted(c.scalar_refs() - scalars)
            if missing:
                raise ConstraintError(f"Constraint {c.name} references unknown scalar '{missing[0]}'")

    def to_text(self) -> str:
        return "\n".join(c.to_line() for c in self.constraints) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        atomic_write_text(path, self.to_text())

    @classmethod
    def from_text(cls, text: str, source: str = "<text>") -> "ConstraintSet":
        constraints = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                constraints.append(parse_constraint(line))
            except ConstraintError as e:
                raise ConstraintError(f"{source}:{lineno}: {e}") from None
        return cls(constraints)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ConstraintSet":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConstraintError(f"Cannot read constraint file {path}: {e}") from e
        cset = cls.from_text(text, source=str(path))
        logger.info(f"✅ Loaded {len(cset)} constraints from {path} (K={cset.K}, H={cset.H})")
        return cset


# ═══════════════════════════════════════════════════════════════
# 📝 PARSING
# ═══════════════════════════════════════════════════════════════

def parse_expr(text: str) -> Expr:
    try:
        tree = ast.parse(text.strip(), mode="eval").body
    except SyntaxError as e:
        raise ConstraintError(f"Cannot parse expression '{text}': {e.msg}") from None
    return _to_expr(tree, text)


def parse_guard(text: str) -> Guard:
    try:
        tree = ast.parse(text.strip(), mode="eval").body
    except SyntaxError as e:
        raise ConstraintError(f"Cannot parse guard '{text}': {e.msg}") from None
    if not isinstance(tree, ast.Compare) or len(tree.ops) != 1:
        raise ConstraintError(f"Guard must be a single comparison: '{text}'")
    op = COMPARATORS.get(type(tree.ops[0]))
    if op is None:
        raise ConstraintError(f"Unsupported comparator in guard '{text}'")
    return Guard(_to_expr(tree.left, text), op, _to_expr(tree.comparators[0], text))


def parse_constraint(line: str) -> Constraint:
    parts = [p.strip() for p in line.split("|")]
    if len(parts) < 3 or len(parts) > 5:
        raise ConstraintError(f"Expected 'name | form | expression [| guard [| scope]]', got '{line}'")
    name, form, expr = parts[:3]
    guard = parts[3] if len(parts) > 3 else ""
    scope = parts[4] if len(parts) > 4 and parts[4] else Scope.INTERVAL.value
    if form not in {"measure", "eq", "le"}:
        raise ConstraintError(f"Constraint {name}: form must be measure, eq or le (got '{form}')")
    if scope not in {s.value for s in Scope}:
        raise ConstraintError(f"Constraint {name}: unknown scope '{scope}'")
    return Constraint(
        name=name,
        form=Form.EQUALITY if form in {"measure", "eq"} else Form.INEQUALITY,
        lhs=parse_expr(expr),
        guard=parse_guard(guard) if guard else None,
        scope=Scope(scope),
        measurement=form == "measure",
    )


def _to_expr(node: ast.AST, text: str) -> Expr:
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return Const(float(node.value))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _to_expr(node.operand, text)
        return BinOp("*", Const(-1.0), inner) if isinstance(node.op, ast.USub) else inner
    if isinstance(node, ast.BinOp):
        ops = {ast.Add: "+", ast.Sub: "-", ast.Mult: "*"}
        op = ops.get(type(node.op))
        if op is None:
            raise ConstraintError(f"Unsupported operator in '{text}'")
        return BinOp(op, _to_expr(node.left, text), _to_expr(node.right, text))
    if isinstance(node, ast.Subscript) and isinstance(node.value, ast.Name) and node.value.id in {"m", "s"}:
        key = node.slice
        if isinstance(key, ast.Name):
            name = key.id
        elif isinstance(key, ast.Constant) and isinstance(key.value, str):
            name = key.value
        else:
            raise ConstraintError(f"Reference must be m[name] or s[name] in '{text}'")
        return Meas(name) if node.value.id == "m" else Scalar(name)
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
        fn = node.func.id
        if not node.args or not (isinstance(node.args[0], ast.Name) and node.args[0].id == "x"):
            raise ConstraintError(f"{fn}() must be applied to x in '{text}'")
        if fn in REDUCERS and len(node.args) == 1:
            return Reduce(fn)
        if fn == "at" and len(node.args) == 2 and isinstance(node.args[1], ast.Constant) \
                and isinstance(node.args[1].value, int):
            return At(node.args[1].value)
        raise ConstraintError(f"Unknown function call {fn}() in '{text}'")
    if isinstance(node, ast.Name) and node.id == "x":
        raise ConstraintError(f"x must be reduced (sum/max/min/mean/count_pos/at) in '{text}'")
    raise ConstraintError(f"Unsupported syntax in '{text}'")


# ═══════════════════════════════════════════════════════════════
# ⚖️ EVALUATION
# ═══════════════════════════════════════════════════════════════

def _aggregate(values: torch.Tensor, kind: CoarsenerKind, name: str) -> torch.Tensor:
    """Collapse per-interval measurements for a window-scoped constraint"""
    if kind is CoarsenerKind.MAX:
        return values.amax(dim=-1, keepdim=True)
    if kind is CoarsenerKind.MIN:
        return values.amin(dim=-1, keepdim=True)
    if kind is CoarsenerKind.MEAN:
        return values.mean(dim=-1, keepdim=True)
    if kind in (CoarsenerKind.SUM, CoarsenerKind.COUNT_POSITIVE):
        return values.sum(dim=-1, keepdim=True)
    raise ConstraintError(f"Periodic measurement '{name}' cannot be used in a window-scoped constraint")


def build_context(
    constraint: Constraint,
    x: torch.Tensor,
    measurements: Mapping[str, torch.Tensor],
    scalars: Mapping[str, torch.Tensor],
    *,
    zoom: int,
    kinds: Mapping[str, CoarsenerKind],
    sharpness: Optional[float] = None,
    threshold: float = 1e-6,
    value_scale: float = 1.0,
) -> EvalContext:
    """
    Batched context for one constraint

    Args:
        x: imputed windows [B, N_c * Z]
        measurements: name -> [B, N_c]
        scalars: name -> [B]
        kinds: coarsener kind per measurement name
    """
    batch, width = x.shape
    if width % zoom:
        raise ConstraintError(f"Imputed length {width} is not a multiple of Z={zoom}")
    if constraint.scope is Scope.INTERVAL:
        view = x.reshape(batch, width // zoom, zoom)
        meas = dict(measurements)
    else:
        view = x.reshape(batch, 1, width)
        meas = {
            name: _aggregate(values, CoarsenerKind(kinds[name]), name)
            for name, values in measurements.items() if name in constraint.measurement_refs()
        }
    return EvalContext(
        x=view,
        measurements={k: torch.as_tensor(v, dtype=x.dtype, device=x.device) for k, v in meas.items()},
        scalars={k: torch.as_tensor(v, dtype=x.dtype, device=x.device).reshape(-1, 1) for k, v in scalars.items()},
        sharpness=sharpness,
        threshold=threshold,
        value_scale=value_scale,
        constraint=constraint.name,
    )


def _single(imputed, bundle: CoarseBundle, scalars: Mapping[str, float], dtype):
    values = imputed.values if isinstance(imputed, FineSeries) else imputed
    x = torch.as_tensor(np.asarray(values) if not torch.is_tensor(values) else values, dtype=dtype)
    if x.dim() == 1:
        x = x.unsqueeze(0)
    if x.shape[-1] != bundle.context_len * bundle.zoom:
        raise ConstraintError(
            f"Imputed length {x.shape[-1]} != {bundle.context_len} x {bundle.zoom}"
        )
    measurements = {e.name: torch.as_tensor(e.values, dtype=dtype).unsqueeze(0) for e in bundle.entries}
    kinds = {e.name: e.spec.kind for e in bundle.entries}
    scal = {k: torch.tensor([float(v)], dtype=dtype) for k, v in scalars.items()}
    return x, measurements, kinds, scal


def eval_exact(
    c: Constraint,
    imputed: Union[FineSeries, np.ndarray],
    bundle: CoarseBundle,
    scalars: Optional[Mapping[str, float]] = None,
    domain: Optional[Domain] = None,
) -> np.ndarray:
    """Exact residual per scoped interval; equality residual = measurement - S(x)"""
    if domain is None:
        domain = imputed.domain if isinstance(imputed, FineSeries) else Domain.NONNEG_REAL
    with torch.no_grad():
        x, meas, kinds, scal = _single(imputed, bundle, scalars or {}, torch.float64)
        ctx = build_context(c, x, meas, scal, zoom=bundle.zoom, kinds=kinds,
                            threshold=positive_threshold(domain))
        return c.residual(ctx)[0].cpu().numpy()


def eval_smooth(
    c: Constraint,
    imputed: torch.Tensor,
    bundle: CoarseBundle,
    scalars: Optional[Mapping[str, float]] = None,
    k: float = DEFAULT_SHARPNESS,
    *,
    domain: Domain = Domain.NONNEG_REAL,
    value_scale: float = 1.0,
) -> torch.Tensor:
    """Differentiable residual: indicators replaced by the smoothed step"""
    if k <= 0:
        raise ConstraintError(f"Sharpness must be positive, got {k}")
    dtype = imputed.dtype if torch.is_tensor(imputed) else torch.float64
    x, meas, kinds, scal = _single(imputed, bundle, scalars or {}, dtype)
    ctx = build_context(c, x, meas, scal, zoom=bundle.zoom, kinds=kinds, sharpness=k,
                        threshold=positive_threshold(domain), value_scale=value_scale)
    return c.residual(ctx)[0]


def violation(residual, is_equality: bool):
    """Magnitude of violation: |Phi| for equalities, max(Psi, 0) otherwise"""
    if torch.is_tensor(residual):
        return residual.abs() if is_equality else torch.clamp(residual, min=0)
    residual = np.asarray(residual)
    return np.abs(residual) if is_equality else np.maximum(residual, 0)


def window_violations(
    cset: ConstraintSet,
    imputed: Union[FineSeries, np.ndarray],
    bundle: CoarseBundle,
    scalars: Optional[Mapping[str, float]] = None,
    domain: Optional[Domain] = None,
) -> Dict[str, float]:
    """Mean exact violation per constraint for one window"""
    return {
        c.name: float(violation(eval_exact(c, imputed, bundle, scalars, domain), c.is_equality).mean())
        for c in cset
    }


# ═══════════════════════════════════════════════════════════════
# 📚 BUILT-IN LIBRARY
# ═══════════════════════════════════════════════════════════════

QUEUE_BINDINGS = {"m_max": "max_qlen", "m_len": "periodic_qlen", "m_out": "sum_sent"}
LINK_BINDINGS = {
    "m_sum": "sum_util",
    "retransmit_sum": "sum_retransmit",
    "congestion_sum": "sum_congestion",
    "bandwidth": "bandwidth",
    "elapsed_time": "elapsed_time",
    "RTT": "RTT",
    "MSS": "MSS",
    "SndCwnd": "SndCwnd",
    "RwndLimited": "RwndLimited",
}

_REQUIRED = {
    "C1": ("m_max",),
    "C2": ("m_len",),
    "C3": ("m_out",),
    "C4": ("m_sum",),
    "C5": ("retransmit_sum",),
    "C6": ("congestion_sum",),
    "C7": ("congestion_sum", "bandwidth"),
    "C8": ("elapsed_time", "RTT", "MSS", "SndCwnd"),
    "C9": ("elapsed_time", "RwndLimited"),
}


def builtin_library(
    bindings: Mapping[str, str],
    include: Sequence[str] = tuple(_REQUIRED),
    *,
    burst_fraction: float = 0.5,
    periodic_offset: int = 0,
) -> ConstraintSet:
    """
    C1-C9 over the caller's measurement/scalar names

    Args:
        bindings: logical name (m_max, m_out, bandwidth, ...) -> measurement or scalar name
        include: which of C1..C9 to build, in order
        burst_fraction: bandwidth fraction a congested interval must reach (C7)
        periodic_offset: fine offset of the periodic sample (C2)
    """
    for cid in include:
        if cid not in _REQUIRED:
            raise ConstraintError(f"Unknown built-in constraint '{cid}'")
        for key in _REQUIRED[cid]:
            if key not in bindings:
                raise ConstraintError(f"Built-in {cid} needs a binding for unbound measurement '{key}'")

    def m(key):
        return Meas(bindings[key])

    def s(key):
        return Scalar(bindings[key])

    builders = {
        "C1": lambda: Constraint("C1", Form.EQUALITY, BinOp("-", m("m_max"), Reduce("max")), measurement=True),
        "C2": lambda: Constraint("C2", Form.EQUALITY, BinOp("-", m("m_len"), At(periodic_offset)), measurement=True),
        "C3": lambda: Constraint("C3", Form.INEQUALITY, BinOp("-", Reduce("count_pos"), m("m_out"))),
        "C4": lambda: Constraint("C4", Form.EQUALITY, BinOp("-", m("m_sum"), Reduce("sum")), measurement=True),
        "C5": lambda: Constraint("C5", Form.INEQUALITY, BinOp("-", m("retransmit_sum"), Reduce("sum"))),
        "C6": lambda: Constraint("C6", Form.INEQUALITY, BinOp("-", m("congestion_sum"), Reduce("sum"))),
        "C7": lambda: Constraint(
            "C7", Form.INEQUALITY,
            BinOp("-", BinOp("*", Const(burst_fraction), s("bandwidth")), Reduce("max")),
            guard=Guard(m("congestion_sum"), ">", Const(0.0)),
        ),
        "C8": lambda: Constraint(
            "C8", Form.INEQUALITY,
            BinOp("-", Reduce("sum"), BinOp("*", s("MSS"), s("SndCwnd"))),
            guard=Guard(s("elapsed_time"), "<=", s("RTT")),
        ),
        "C9": lambda: Constraint(
            "C9", Form.EQUALITY,
            BinOp("-", Const(0.0), Reduce("sum")),
            guard=Guard(s("elapsed_time"), "<=", s("RwndLimited")),
        ),
    }
    return ConstraintSet(builders[cid]() for cid in include)


def library_for_case(case: str, *, burst_fraction: float = 0.5, periodic_offset: int = 0) -> ConstraintSet:
    """Default constraint set for a generated dataset case"""
    if case == "queue":
        return builtin_library(QUEUE_BINDINGS, ("C1", "C2", "C3"),
                               burst_fraction=burst_fraction, periodic_offset=periodic_offset)
    if case == "link":
        return builtin_library(LINK_BINDINGS, ("C4", "C5", "C6", "C7", "C8", "C9"),
                               burst_fraction=burst_fraction, periodic_offset=periodic_offset)
    raise ConstraintError(f"No built-in constraint library for case '{case}'")


# ═══════════════════════════════════════════════════════════════
# 🗂️ DATASET-LEVEL EVALUATION
# ═══════════════════════════════════════════════════════════════

def gather_measurements(examples: Sequence, dtype=torch.float64) -> Tuple[Dict[str, torch.Tensor], Dict[str, torch.Tensor]]:
    """Stack per-window measurements [N, N_c] and scalars [N] shared by every example"""
    if not examples:
        return {}, {}
    names = [e.name for e in examples[0].input.entries]
    measurements = {
        name: torch.tensor(np.stack([ex.input.get(name) for ex in examples]), dtype=dtype) for name in names
    }
    shared = set(examples[0].scalars)
    for ex in examples[1:]:
        shared &= set(ex.scalars)
    scalars = {
        name: torch.tensor([float(ex.scalars[name]) for ex in examples], dtype=dtype) for name in sorted(shared)
    }
    return measurements, scalars


def residual_matrix(
    c: Constraint,
    x: torch.Tensor,
    measurements: Mapping[str, torch.Tensor],
    scalars: Mapping[str, torch.Tensor],
    *,
    zoom: int,
    kinds: Mapping[str, CoarsenerKind],
    sharpness: Optional[float] = None,
    threshold: float = 1e-6,
    value_scale: float = 1.0,
) -> torch.Tensor:
    """Residuals [B, N_c]; a window-scoped constraint fills column 0 and leaves zeros elsewhere"""
    ctx = build_context(c, x, measurements, scalars, zoom=zoom, kinds=kinds, sharpness=sharpness,
                        threshold=threshold, value_scale=value_scale)
    r = c.residual(ctx)
    n_intervals = x.shape[-1] // zoom
    if r.shape[-1] == n_intervals:
        return r
    return torch.nn.functional.pad(r, (0, n_intervals - r.shape[-1]))


def dataset_violations(
    cset: ConstraintSet,
    outputs: np.ndarray,
    examples: Sequence,
    domain: Domain = Domain.NONNEG_REAL,
) -> Dict[str, np.ndarray]:
    """Exact violation magnitudes [N, N_c] per constraint for a batch of imputed windows"""
    if not len(examples):
        return {c.name: np.zeros((0, 0)) for c in cset}
    zoom = examples[0].input.zoom
    kinds = {e.name: e.spec.kind for e in examples[0].input.entries}
    measurements, scalars = gather_measurements(examples)
    x = torch.as_tensor(np.asarray(outputs), dtype=torch.float64)
    out = {}
    with torch.no_grad():
        for c in cset:
            r = residual_matrix(c, x, measurements, scalars, zoom=zoom, kinds=kinds,
                                threshold=positive_threshold(domain))
            out[c.name] = violation(r, c.is_equality).numpy()
    return out
