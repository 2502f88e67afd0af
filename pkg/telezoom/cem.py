# -*- coding: utf-8 -*-
"""
🛠️ Constraint Enforcement
Minimal L1 repair of a model output so every constraint holds exactly (z3 Optimize)
"""

import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
import z3

from telezoom.config import CemConfig, config
from telezoom.constraints import (
    At,
    BinOp,
    Const,
    Constraint,
    ConstraintSet,
    Meas,
    Reduce,
    Scalar,
    Scope,
    build_context,
    residual_matrix,
    violation,
)
from telezoom.errors import ConstraintError, ShapeError, SolverError
from telezoom.series import CoarseBundle, CoarsenerKind, Domain, FineSeries, WindowExample, positive_threshold
from telezoom.utils.workers import run_pool

logger = logging.getLogger(__name__)

ORACLE_MAX_WIDTH = 8
ORACLE_MAX_GRID = 8
ORACLE_CHUNK = 1 << 16
FEASIBILITY_TOL = 1e-9
VERIFY_TOL = 1e-9


# ═══════════════════════════════════════════════════════════════
# 📦 PROBLEM / REPORT
# ═══════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class RepairProblem:
    """Everything needed to build the solver instance for one window"""

    window_id: int
    model_out: np.ndarray
    zoom: int
    context_len: int
    domain: Domain
    constraints: Tuple[Constraint, ...]
    active: Mapping[str, np.ndarray]
    measurements: Mapping[str, np.ndarray]
    scalars: Mapping[str, float]
    kinds: Mapping[str, CoarsenerKind]
    fixed: Mapping[int, float]
    bound: Optional[float]
    channel: str = "target"
    granularity_ms: float = 1.0

    @property
    def width(self) -> int:
        return self.zoom * self.context_len

    def measurement_tensors(self, rows: int = 1):
        meas = {k: torch.tensor(v, dtype=torch.float64).expand(rows, -1) for k, v in self.measurements.items()}
        scal = {k: torch.full((rows,), float(v), dtype=torch.float64) for k, v in self.scalars.items()}
        return meas, scal


@dataclass
class RepairReport:
    window_id: int
    objective: float
    pre_violations: Dict[str, float]
    solve_ms: float
    relaxed: List[str] = field(default_factory=list)
    infeasible: bool = False
    status: str = "sat"

    def to_row(self) -> Dict[str, object]:
        row = {
            "window_id": self.window_id,
            "objective": self.objective,
            "relaxed": ";".join(self.relaxed),
            "infeasible": self.infeasible,
            "status": self.status,
            "solve_ms": round(self.solve_ms, 3),
        }
        row.update({f"pre_{k}": v for k, v in self.pre_violations.items()})
        return row


def merge_reports(reports: Sequence[RepairReport]) -> pd.DataFrame:
    """One row per window, ordered by window id whatever order the workers finished in"""
    frame = pd.DataFrame([r.to_row() for r in reports])
    if frame.empty:
        return frame
    return frame.sort_values("window_id", kind="stable").reset_index(drop=True)


# ═══════════════════════════════════════════════════════════════
# 🧾 COMPILATION
# ═══════════════════════════════════════════════════════════════

def _fixed_samples(c: Constraint, ctx_args: dict, width: int, zoom: int, active: np.ndarray) -> Dict[int, float]:
    """Fine indices pinned by a measurement equality whose only imputed term is at(x, k)"""
    offsets = c.sample_offsets()
    if len(offsets) != 1 or any(isinstance(n, Reduce) for n in c.lhs.walk()) or c.scope is not Scope.INTERVAL:
        return {}
    offset = offsets[0]
    n_intervals = width // zoom
    idx = np.arange(n_intervals) * zoom + offset
    zeros = torch.zeros((1, width), dtype=torch.float64)
    ones = zeros.clone()
    ones[0, idx] = 1.0
    r0 = residual_matrix(c, zeros, **ctx_args)[0].numpy()
    r1 = residual_matrix(c, ones, **ctx_args)[0].numpy()
    fixed = {}
    for k in range(n_intervals):
        slope = r1[k] - r0[k]
        if active[k] and slope != 0:
            fixed[int(idx[k])] = float(-r0[k] / slope)
    return fixed


def _channel_bound(
    cset: Sequence[Constraint],
    bundle: CoarseBundle,
    scalars: Mapping[str, float],
    channel: str,
    channel_bound: Optional[float],
) -> Optional[float]:
    candidates = [v for v in (channel_bound, scalars.get("capacity")) if v is not None]
    candidates += [float(e.values.max()) for e in bundle.entries
                   if e.channel == channel and e.spec.kind is CoarsenerKind.MAX]
    if candidates:
        return max(candidates)
    if any(c.has_indicator for c in cset):
        raise SolverError(
            f"count_pos needs an upper bound for channel '{channel}': set cem.channel_bound "
            "or supply a 'capacity' scalar"
        )
    return None


def compile_problem(
    constraint_set: ConstraintSet,
    bundle: CoarseBundle,
    scalars: Mapping[str, float],
    model_out,
    *,
    domain: Domain = Domain.NONNEG_REAL,
    channel: str = "target",
    channel_bound: Optional[float] = None,
    window_id: int = 0,
    granularity_ms: float = 1.0,
) -> RepairProblem:
    """
    Resolve references, evaluate guards, and find sampled indices for one window

    Guards are measurement-only, so a constraint whose guard is false in an
    interval is simply not emitted there.
    """
    model_out = np.asarray(model_out.values if isinstance(model_out, FineSeries) else model_out,
                           dtype=np.float64).reshape(-1)
    width = bundle.context_len * bundle.zoom
    if model_out.size != width:
        raise ShapeError(f"Model output has {model_out.size} values, window needs {width}")

    measurements = {e.name: np.asarray(e.values, dtype=np.float64) for e in bundle.entries}
    kinds = {e.name: e.spec.kind for e in bundle.entries}
    scalars = {k: float(v) for k, v in scalars.items()}
    meas_t = {k: torch.tensor(v, dtype=torch.float64).unsqueeze(0) for k, v in measurements.items()}
    scal_t = {k: torch.tensor([v], dtype=torch.float64) for k, v in scalars.items()}
    ctx_args = dict(measurements=meas_t, scalars=scal_t, zoom=bundle.zoom, kinds=kinds,
                    threshold=positive_threshold(domain))

    zeros = torch.zeros((1, width), dtype=torch.float64)
    active, fixed = {}, {}
    for c in constraint_set:
        ctx = build_context(c, zeros, **ctx_args)
        c.lhs.evaluate(ctx)
        active[c.name] = c.active(ctx)[0].numpy().astype(bool)
        if c.measurement:
            fixed.update(_fixed_samples(c, ctx_args, width, bundle.zoom, active[c.name]))

    live = [c for c in constraint_set if active[c.name].any()]
    return RepairProblem(
        window_id=window_id,
        model_out=model_out,
        zoom=bundle.zoom,
        context_len=bundle.context_len,
        domain=Domain(domain),
        constraints=tuple(constraint_set),
        active=active,
        measurements=measurements,
        scalars=scalars,
        kinds=kinds,
        fixed=fixed,
        bound=_channel_bound(live, bundle, scalars, channel, channel_bound),
        channel=channel,
        granularity_ms=granularity_ms,
    )


class _Encoder:
    """Translates expression trees into z3 terms over one window's variables"""

    def __init__(self, problem: RepairProblem, xs: List[z3.ArithRef], opt: z3.Optimize, ctx: z3.Context):
        self.problem, self.xs, self.opt, self.ctx = problem, xs, opt, ctx
        self.tie_costs: List[z3.ArithRef] = []
        self._fresh = itertools.count()

    def real(self, value) -> z3.ArithRef:
        exact = value if isinstance(value, Fraction) else Fraction(float(value))
        return z3.RealVal(str(exact), self.ctx)

    def segment(self, scope: Scope, k: int) -> range:
        if scope is Scope.WINDOW:
            return range(self.problem.width)
        return range(k * self.problem.zoom, (k + 1) * self.problem.zoom)

    def measurement(self, name: str, scope: Scope, k: int) -> float:
        values = self.problem.measurements[name]
        if scope is Scope.INTERVAL:
            return float(values[k])
        kind = CoarsenerKind(self.problem.kinds[name])
        if kind is CoarsenerKind.MAX:
            return float(values.max())
        if kind is CoarsenerKind.MIN:
            return float(values.min())
        if kind is CoarsenerKind.MEAN:
            return float(values.mean())
        if kind is CoarsenerKind.PERIODIC:
            raise ConstraintError(f"Periodic measurement '{name}' cannot be used in a window-scoped constraint")
        return float(values.sum())

    def extremum(self, seg: range, largest: bool) -> z3.ArithRef:
        n = next(self._fresh)
        aux = z3.Real(f"{'max' if largest else 'min'}_{n}", self.ctx)
        witnesses = [z3.Bool(f"w{n}_{t}", self.ctx) for t in seg]
        for t, w in zip(seg, witnesses):
            self.opt.add(aux >= self.xs[t] if largest else aux <= self.xs[t])
            self.opt.add(z3.Implies(w, aux == self.xs[t]))
        self.opt.add(z3.Or(witnesses))
        if largest:
            # rank 0 is the earliest index of the model output's maximum
            out = self.problem.model_out
            order = sorted(seg, key=lambda t: (-out[t], t))
            rank = {t: r for r, t in enumerate(order)}
            self.tie_costs.extend(z3.If(w, z3.IntVal(rank[t], self.ctx), z3.IntVal(0, self.ctx))
                                  for t, w in zip(seg, witnesses))
        return aux

    def count_positive(self, seg: range) -> z3.ArithRef:
        """b_t holds exactly when x_t >= threshold, so the count matches the exact evaluator"""
        n = next(self._fresh)
        bound = self.real(self.problem.bound)
        threshold = self.real(positive_threshold(self.problem.domain))
        zero, one = self.real(0), self.real(1)
        terms = []
        for t in seg:
            b = z3.Bool(f"b{n}_{t}", self.ctx)
            self.opt.add(self.xs[t] <= z3.If(b, bound, zero))
            self.opt.add(z3.Implies(b, self.xs[t] >= threshold))
            terms.append(z3.If(b, one, zero))
        return z3.Sum(terms)

    def expr(self, node, scope: Scope, k: int) -> z3.ArithRef:
        if isinstance(node, Const):
            return self.real(node.value)
        if isinstance(node, Meas):
            return self.real(self.measurement(node.name, scope, k))
        if isinstance(node, Scalar):
            return self.real(self.problem.scalars[node.name])
        if isinstance(node, At):
            seg = self.segment(scope, k)
            if node.offset >= len(seg):
                raise ConstraintError(f"at(x, {node.offset}) outside a {len(seg)}-step scope")
            return self.xs[seg.start + node.offset]
        if isinstance(node, Reduce):
            seg = self.segment(scope, k)
            if node.op == "sum":
                return z3.Sum([self.xs[t] for t in seg])
            if node.op == "mean":
                return z3.Sum([self.xs[t] for t in seg]) * self.real(Fraction(1, len(seg)))
            if node.op == "max":
                return self.extremum(seg, largest=True)
            if node.op == "min":
                return self.extremum(seg, largest=False)
            return self.count_positive(seg)
        if isinstance(node, BinOp):
            a, b = self.expr(node.left, scope, k), self.expr(node.right, scope, k)
            return a + b if node.op == "+" else a - b if node.op == "-" else a * b
        raise ConstraintError(f"Cannot encode expression node {node!r}")


def _solve(problem: RepairProblem, keep: Sequence[Constraint], time_budget_s: float):
    """Optimal repair under `keep`, or (status, None) when unsat or out of time"""
    ctx = z3.Context()
    opt = z3.Optimize(ctx=ctx)
    opt.set("timeout", max(1, int(time_budget_s * 1000)))

    integer = problem.domain is Domain.NONNEG_INT
    raw = [(z3.Int if integer else z3.Real)(f"x{t}", ctx) for t in range(problem.width)]
    xs = [z3.ToReal(x) if integer else x for x in raw]
    encoder = _Encoder(problem, xs, opt, ctx)
    for x in xs:
        opt.add(x >= encoder.real(0))
    for t, value in problem.fixed.items():
        opt.add(xs[t] == encoder.real(value))

    for c in keep:
        active = problem.active[c.name]
        for k in np.flatnonzero(active):
            term = encoder.expr(c.lhs, c.scope, int(k))
            opt.add(term == encoder.real(0) if c.is_equality else term <= encoder.real(0))

    cost = []
    for t in range(problem.width):
        if t in problem.fixed:
            continue
        p, n = z3.Real(f"p{t}", ctx), z3.Real(f"n{t}", ctx)
        opt.add(p >= 0, n >= 0, xs[t] - encoder.real(problem.model_out[t]) == p - n)
        cost.extend((p, n))
    if cost:
        opt.minimize(z3.Sum(cost))
    if encoder.tie_costs:
        opt.minimize(z3.Sum(encoder.tie_costs))

    status = opt.check()
    if status != z3.sat:
        return str(status), None
    model = opt.model()
    values = np.empty(problem.width)
    for t, x in enumerate(raw):
        v = model.eval(x, model_completion=True)
        values[t] = v.as_long() if integer else float(v.as_fraction())
    return "sat", values


# ═══════════════════════════════════════════════════════════════
# 🔧 ENFORCEMENT
# ═══════════════════════════════════════════════════════════════

def _violations(problem: RepairProblem, values: np.ndarray, constraints=None, worst: bool = False) -> Dict[str, float]:
    """Exact violation per constraint, averaged over intervals (or the worst interval)"""
    meas, scal = problem.measurement_tensors()
    x = torch.tensor(values, dtype=torch.float64).unsqueeze(0)
    out = {}
    with torch.no_grad():
        for c in problem.constraints if constraints is None else constraints:
            r = violation(residual_matrix(c, x, meas, scal, zoom=problem.zoom, kinds=problem.kinds,
                                          threshold=positive_threshold(problem.domain)), c.is_equality)
            out[c.name] = float(r.max() if worst else r.mean()) if r.numel() else 0.0
    return out


def _unmet(problem: RepairProblem, values: np.ndarray, keep: Sequence[Constraint]) -> List[str]:
    """Kept constraints the repaired values still break beyond float tolerance"""
    tol = VERIFY_TOL * max(1.0, float(np.abs(values).max(initial=0.0)))
    return [name for name, v in _violations(problem, values, keep, worst=True).items() if v > tol]


def objective_value(problem: RepairProblem, values: np.ndarray) -> float:
    mask = np.ones(problem.width, dtype=bool)
    mask[list(problem.fixed)] = False
    return float(np.abs(values - problem.model_out)[mask].sum())


def enforce(
    problem: RepairProblem,
    *,
    time_budget_s: Optional[float] = None,
    fallback: str = "drop_operational",
) -> Tuple[FineSeries, RepairReport]:
    """
    Minimal L1 correction satisfying every compiled constraint

    When the full set is infeasible (or the budget runs out), operational
    constraints are dropped one at a time from the end of the declaration
    order. If the measurement constraints alone cannot be met, the model output
    is returned unchanged and flagged infeasible.
    """
    budget = config.CEM_TIME_BUDGET_S if time_budget_s is None else time_budget_s
    started = time.perf_counter()
    pre = _violations(problem, problem.model_out)
    keep = list(problem.constraints)
    relaxed: List[str] = []

    status, values = _solve(problem, keep, budget)
    while values is None and fallback == "drop_operational":
        operational = [c for c in keep if not c.measurement]
        if not operational:
            break
        dropped = operational[-1]
        keep.remove(dropped)
        relaxed.append(dropped.name)
        logger.warning(f"⚠️ Window {problem.window_id}: {status}, relaxing {dropped.name}")
        status, values = _solve(problem, keep, budget)

    solve_ms = (time.perf_counter() - started) * 1000.0
    if values is not None:
        unmet = _unmet(problem, values, keep)
        if unmet:
            logger.error(f"❌ Window {problem.window_id}: solver answer breaks {', '.join(unmet)}, discarding it")
            values, status = None, "unverified"
    if values is None:
        logger.warning(f"⚠️ Window {problem.window_id}: measurement constraints infeasible ({status}), output left as is")
        series = FineSeries(problem.channel, problem.model_out, problem.granularity_ms, Domain.NONNEG_REAL)
        return series, RepairReport(problem.window_id, 0.0, pre, solve_ms, relaxed, True, status)

    series = FineSeries(problem.channel, values, problem.granularity_ms, problem.domain)
    report = RepairReport(problem.window_id, objective_value(problem, values), pre, solve_ms, relaxed, False, status)
    return series, report


def enforce_window(
    example: WindowExample,
    model_out,
    constraint_set: ConstraintSet,
    cfg: Optional[CemConfig] = None,
    *,
    domain: Domain = Domain.NONNEG_REAL,
    channel: str = "target",
    granularity_ms: Optional[float] = None,
) -> Tuple[FineSeries, RepairReport]:
    """Compile and repair one window; granularity defaults to the window's own target"""
    cfg = cfg or CemConfig()
    if granularity_ms is None:
        granularity_ms = example.target.granularity_ms if example.target is not None else 1.0
    problem = compile_problem(
        constraint_set, example.input, example.scalars, model_out,
        domain=domain, channel=channel, channel_bound=cfg.channel_bound, window_id=example.example_id,
        granularity_ms=granularity_ms,
    )
    return enforce(problem, time_budget_s=cfg.time_budget_s, fallback=cfg.fallback)


def enforce_many(
    examples: Sequence[WindowExample],
    outputs: np.ndarray,
    constraint_set: ConstraintSet,
    cfg: Optional[CemConfig] = None,
    *,
    domain: Domain = Domain.NONNEG_REAL,
    channel: str = "target",
    granularity_ms: Optional[float] = None,
    workers: Optional[int] = None,
) -> Tuple[List[FineSeries], pd.DataFrame]:
    """Repair every window on the worker pool; results keep input order"""
    if len(examples) != len(outputs):
        raise ShapeError(f"{len(examples)} windows but {len(outputs)} model outputs")
    jobs = list(zip(examples, outputs))
    results = run_pool(
        lambda job: enforce_window(job[0], job[1], constraint_set, cfg, domain=domain, channel=channel,
                                   granularity_ms=granularity_ms),
        jobs, workers,
    )
    reports = [r for _, r in results]
    infeasible = sum(r.infeasible for r in reports)
    logger.info(
        f"✅ Repaired {len(reports)} windows "
        f"({sum(bool(r.relaxed) for r in reports)} relaxed, {infeasible} infeasible)"
    )
    return [s for s, _ in results], merge_reports(reports)


# ═══════════════════════════════════════════════════════════════
# 🔍 ORACLE
# ═══════════════════════════════════════════════════════════════

def brute_force_oracle(problem: RepairProblem, value_grid: Sequence[float]) -> Tuple[float, Optional[np.ndarray]]:
    """
    Exhaustive optimum over value_grid ** width

    Returns (inf, None) when no grid point is feasible. Ties keep the first
    point in lexicographic grid order.
    """
    grid = sorted({float(v) for v in value_grid})
    if problem.width > ORACLE_MAX_WIDTH or len(grid) > ORACLE_MAX_GRID:
        raise SolverError(
            f"Oracle limited to width <= {ORACLE_MAX_WIDTH} and grid <= {ORACLE_MAX_GRID} "
            f"(got {problem.width}, {len(grid)})"
        )
    mask = np.ones(problem.width, dtype=bool)
    mask[list(problem.fixed)] = False
    target = torch.tensor(problem.model_out, dtype=torch.float64)
    threshold = positive_threshold(problem.domain)

    best_cost, best = math.inf, None
    points = itertools.product(grid, repeat=problem.width)
    while True:
        chunk = list(itertools.islice(points, ORACLE_CHUNK))
        if not chunk:
            break
        x = torch.tensor(chunk, dtype=torch.float64)
        meas, scal = problem.measurement_tensors(len(chunk))
        ok = torch.ones(len(chunk), dtype=torch.bool)
        for t, value in problem.fixed.items():
            ok &= x[:, t] == value
        for c in problem.constraints:
            r = residual_matrix(c, x, meas, scal, zoom=problem.zoom, kinds=problem.kinds, threshold=threshold)
            ok &= (r.abs() <= FEASIBILITY_TOL).all(dim=-1) if c.is_equality else (r <= FEASIBILITY_TOL).all(dim=-1)
        cost = (x - target).abs()[:, torch.from_numpy(mask)].sum(dim=-1)
        cost[~ok] = math.inf
        i = int(torch.argmin(cost))
        if float(cost[i]) < best_cost:
            best_cost, best = float(cost[i]), x[i].numpy().copy()
    return best_cost, best
