"""Quadrotor and two-tank benchmark problems and the multistart report."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import expr as ex
from .expr import Expr
from .logic import And, Epsilon, Formula, Implies, Not, Or, StrictnessMode, Until, equals, geq, leq
from .nlp import (
    AssembledNlp,
    Problem,
    RunClass,
    SolveOutcome,
    SolverOptions,
    best_feasible_cost,
    build,
    classify,
    multistart,
    solve,
)
from .reform import ReformConfig

__all__ = [
    "QuadrotorSpec",
    "TwoTankSpec",
    "build_quadrotor",
    "build_two_tank",
    "simulate_quadrotor",
    "simulate_two_tank",
    "BenchReport",
    "bench_problem",
    "run_bench",
    "rescore",
    "compare_methods",
    "report_csv",
    "REPORT_FIELDS",
]

SQRT_DELTA = 1e-9


@dataclass(frozen=True)
class QuadrotorSpec:
    N: int = 10
    Ts: float = 0.25
    mass: float = 0.15
    inertia: float = 0.00125
    arm: float = 0.1
    gravity: float = 9.81
    u_max: float = 2.0
    target_r: float = 0.0
    target_s: float = 15.0
    green_center: tuple[float, float] = (2.0, 1.0)
    green_radius: float = 1.0
    green_steps: tuple[int, ...] = (2, 3)
    red_center: tuple[float, float] = (0.0, 8.0)
    red_radius: float = 5.0
    red_steps: tuple[int, ...] = (5, 6, 7, 8, 9)
    position_box: tuple[float, float] = (-5.0, 20.0)
    velocity_box: tuple[float, float] = (-10.0, 10.0)
    angle_box: tuple[float, float] = (-math.pi, math.pi)
    rate_box: tuple[float, float] = (-10.0, 10.0)

    def x_index(self, k: int, j: int) -> int:
        """State ``j`` (1..6) at step ``k`` (1..N)."""
        return 6 * (k - 1) + (j - 1)

    def u_index(self, k: int, i: int) -> int:
        """Thrust ``i`` (1..2) at step ``k`` (1..N)."""
        return 6 * self.N + 2 * (k - 1) + (i - 1)


@dataclass(frozen=True)
class TwoTankSpec:
    case: int = 1
    N: int = 20
    Ts: float = 3.0
    A1: float = 2.0
    A2: float = 1.0
    s1: float = 0.015
    s12: float = 0.02
    s2: float = 0.02
    hs12: float = 2.0
    hs2: float = 3.0
    gravity: float = 9.81
    u_max: float = 0.5
    level_box: tuple[float, float] = (0.0, 10.0)
    until_threshold: float = 4.5
    until_start: int = 0

    def __post_init__(self) -> None:
        if self.case not in (1, 2):
            raise ValueError(f"two-tank case must be 1 or 2, got {self.case}")

    @property
    def h0(self) -> tuple[float, float]:
        return (5.0, 5.0) if self.case == 1 else (5.0, 2.0)

    @property
    def hN(self) -> tuple[float, float]:
        return (1.5, 3.5) if self.case == 1 else (2.0, 4.0)

    def h_index(self, tank: int, k: int) -> int:
        """Level of ``tank`` (1, 2) at step ``k`` (1..N)."""
        return (tank - 1) * self.N + (k - 1)

    def hbar_index(self, tank: int, k: int) -> int:
        """Level above the outlet of ``tank`` at step ``k`` (0..N-1)."""
        return 2 * self.N + (tank - 1) * self.N + k

    def u_index(self, k: int) -> int:
        return 4 * self.N + (k - 1)


def build_quadrotor(spec: QuadrotorSpec | None = None) -> tuple[Problem, Formula]:
    """Planar quadrotor, 10 steps, conditional obstacle avoidance.

    The dynamics are the semi-implicit update with trapezoidal positions and
    the thrust of step ``k + 1`` driving the transition out of step ``k``.
    """
    q = QuadrotorSpec() if spec is None else spec
    N = q.N
    names = [f"x{j}_{k}" for k in range(1, N + 1) for j in range(1, 7)]
    names += [f"u{i}_{k}" for k in range(1, N + 1) for i in (1, 2)]

    def X(k: int, j: int) -> Expr:
        return ex.const(0.0) if k == 0 else ex.var(q.x_index(k, j))

    def U(k: int, i: int) -> Expr:
        return ex.var(q.u_index(k, i))

    eqs: list[Expr] = []
    for k in range(N):
        thrust = U(k + 1, 1) + U(k + 1, 2)
        rates = [
            (X(k, 2) + X(k + 1, 2)) / 2.0,
            ex.sin(X(k, 5)) * thrust / q.mass,
            (X(k, 4) + X(k + 1, 4)) / 2.0,
            ex.cos(X(k, 5)) * thrust / q.mass - q.gravity,
            (X(k, 6) + X(k + 1, 6)) / 2.0,
            q.arm * (U(k + 1, 1) - U(k + 1, 2)) / q.inertia,
        ]
        for j, rate in enumerate(rates, start=1):
            eqs.append(X(k + 1, j) - X(k, j) - q.Ts * rate)
    eqs.append(X(N, 1) - q.target_r)
    eqs.append(X(N, 3) - q.target_s)

    cost = None
    for k in range(1, N + 1):
        for i in (1, 2):
            t = U(k, i) ** 2
            cost = t if cost is None else cost + t

    lower = np.full(len(names), -np.inf)
    upper = np.full(len(names), np.inf)
    ilo = np.empty(len(names))
    ihi = np.empty(len(names))
    boxes = {1: q.position_box, 2: q.velocity_box, 3: q.position_box,
             4: q.velocity_box, 5: q.angle_box, 6: q.rate_box}
    for k in range(1, N + 1):
        for j in range(1, 7):
            ilo[q.x_index(k, j)], ihi[q.x_index(k, j)] = boxes[j]
        for i in (1, 2):
            idx = q.u_index(k, i)
            lower[idx], upper[idx] = 0.0, q.u_max
            ilo[idx], ihi[idx] = 0.0, q.u_max
    base = Problem(names, cost, lower, upper, [], eqs, ilo, ihi)

    gx, gy = q.green_center
    rx, ry = q.red_center

    def circle(k, cx, cy, rad, tag):
        body = (X(k, 1) - cx) ** 2 + (X(k, 3) - cy) ** 2 - rad**2
        return leq(body, f"{tag}{k}")

    green = Or(tuple(circle(k, gx, gy, q.green_radius, "green") for k in q.green_steps))
    red = Or(tuple(circle(k, rx, ry, q.red_radius, "red") for k in q.red_steps))
    return base, Implies(Not(green), Not(red))


def simulate_quadrotor(u: np.ndarray, spec: QuadrotorSpec | None = None) -> np.ndarray:
    """Roll the dynamics forward from rest; ``u`` has shape (N, 2).

    Returns the base decision vector (states then thrusts).
    """
    q = QuadrotorSpec() if spec is None else spec
    u = np.asarray(u, float).reshape(q.N, 2)
    x = np.zeros(6)
    z = np.zeros(8 * q.N)
    for k in range(q.N):
        th = u[k].sum()
        nxt = x.copy()
        nxt[1] = x[1] + q.Ts * math.sin(x[4]) * th / q.mass
        nxt[3] = x[3] + q.Ts * (math.cos(x[4]) * th / q.mass - q.gravity)
        nxt[5] = x[5] + q.Ts * q.arm * (u[k, 0] - u[k, 1]) / q.inertia
        nxt[0] = x[0] + q.Ts * (x[1] + nxt[1]) / 2
        nxt[2] = x[2] + q.Ts * (x[3] + nxt[3]) / 2
        nxt[4] = x[4] + q.Ts * (x[5] + nxt[5]) / 2
        x = nxt
        z[6 * k : 6 * k + 6] = x
        z[6 * q.N + 2 * k : 6 * q.N + 2 * k + 2] = u[k]
    return z


def _flow(level: Expr, g: float) -> Expr:
    return ex.sqrt(2.0 * g * level + SQRT_DELTA)


def build_two_tank(case: int = 1, spec: TwoTankSpec | None = None) -> tuple[Problem, Formula]:
    """Two coupled tanks with outlets above the tank floors.

    The levels above the outlets are extra decision variables tied to the
    tank levels by a two-way case split in the logic.
    """
    t = TwoTankSpec(case=case) if spec is None else spec
    N = t.N
    names = [f"h{j}_{k}" for j in (1, 2) for k in range(1, N + 1)]
    names += [f"hbar{j}_{k}" for j in (1, 2) for k in range(N)]
    names += [f"u_{k}" for k in range(1, N + 1)]
    h0 = t.h0

    def H(j: int, k: int) -> Expr:
        return ex.const(h0[j - 1]) if k == 0 else ex.var(t.h_index(j, k))

    def HB(j: int, k: int) -> Expr:
        return ex.var(t.hbar_index(j, k))

    def U(k: int) -> Expr:
        return ex.var(t.u_index(k))

    g = t.gravity
    eqs: list[Expr] = []
    for k in range(N):
        out12 = t.s12 * _flow(HB(1, k), g)
        rate1 = U(k + 1) / t.A1 - t.s1 * _flow(H(1, k), g) / t.A1 - out12 / t.A1
        rate2 = out12 / t.A2 - t.s2 * _flow(HB(2, k), g) / t.A2
        eqs.append(H(1, k + 1) - H(1, k) - t.Ts * rate1)
        eqs.append(H(2, k + 1) - H(2, k) - t.Ts * rate2)
    eqs.append(H(1, N) - t.hN[0])
    eqs.append(H(2, N) - t.hN[1])

    cost = None
    for k in range(1, N + 1):
        cost = U(k) ** 2 if cost is None else cost + U(k) ** 2

    n = len(names)
    # the level box doubles as the variable limits for levels and outlet heights
    lower = np.full(n, t.level_box[0])
    upper = np.full(n, t.level_box[1])
    ilo = np.full(n, t.level_box[0])
    ihi = np.full(n, t.level_box[1])
    for k in range(1, N + 1):
        lower[t.u_index(k)], upper[t.u_index(k)] = 0.0, t.u_max
        ilo[t.u_index(k)], ihi[t.u_index(k)] = 0.0, t.u_max
    base = Problem(names, cost, lower, upper, [], eqs, ilo, ihi)

    parts = []
    for k in range(N):
        for j, hs in ((1, t.hs12), (2, t.hs2)):
            above = And((geq(H(j, k) - hs, f"h{j}_{k}>=hs"), equals(HB(j, k) - H(j, k) + hs, f"hbar{j}_{k}=h-hs")))
            below = And((leq(H(j, k) - hs, f"h{j}_{k}<=hs"), equals(HB(j, k), f"hbar{j}_{k}=0")))
            parts.append(Or((above, below)))
    if t.case == 2:
        a = tuple(geq(H(1, k) - t.until_threshold, f"h1_{k}>=thr") for k in range(N + 1))
        b = tuple(geq(H(2, k) - t.until_threshold, f"h2_{k}>=thr") for k in range(N + 1))
        parts.append(Until(a, b, t.until_start))
    return base, And(tuple(parts))


def simulate_two_tank(u: np.ndarray, spec: TwoTankSpec | None = None) -> np.ndarray:
    """Roll the level dynamics forward with the exact case split."""
    t = TwoTankSpec() if spec is None else spec
    u = np.asarray(u, float)
    z = np.zeros(5 * t.N)
    h1, h2 = t.h0
    g = t.gravity
    for k in range(t.N):
        b1, b2 = max(h1 - t.hs12, 0.0), max(h2 - t.hs2, 0.0)
        z[t.hbar_index(1, k)], z[t.hbar_index(2, k)] = b1, b2
        f12 = t.s12 * math.sqrt(2 * g * b1 + SQRT_DELTA)
        h1n = h1 + t.Ts * (u[k] / t.A1 - t.s1 * math.sqrt(2 * g * max(h1, 0.0) + SQRT_DELTA) / t.A1 - f12 / t.A1)
        h2n = h2 + t.Ts * (f12 / t.A2 - t.s2 * math.sqrt(2 * g * b2 + SQRT_DELTA) / t.A2)
        h1, h2 = h1n, h2n
        z[t.h_index(1, k + 1)], z[t.h_index(2, k + 1)] = h1, h2
        z[t.u_index(k + 1)] = u[k]
    return z


# -- reports ---------------------------------------------------------------

REPORT_FIELDS = (
    "method", "runs", "opt", "subopt", "inf", "avg_cost",
    "avg_time_ms", "avg_time_feas_ms", "max_time_ms", "seed",
)


@dataclass
class BenchReport:
    name: str
    method: str
    runs: int
    seed: int
    opt: int
    subopt: int
    inf: int
    avg_cost: float
    best_cost: float
    avg_time_ms: float
    avg_time_feas_ms: float
    max_time_ms: float
    config: dict = field(default_factory=dict)
    classes: list[str] = field(default_factory=list, repr=False)
    objectives: list[float] = field(default_factory=list, repr=False)
    outcomes: list[SolveOutcome] = field(default_factory=list, repr=False, compare=False)
    formula: Formula | None = field(default=None, repr=False, compare=False)

    @property
    def feasible(self) -> int:
        return self.opt + self.subopt

    def row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in REPORT_FIELDS}

    def deterministic_view(self) -> dict:
        """Everything except wall-clock timings and raw outcomes."""
        d = asdict(self)
        for k in ("avg_time_ms", "avg_time_feas_ms", "max_time_ms", "outcomes", "formula"):
            d.pop(k)
        return d

    def table(self) -> str:
        label = f"{self.method}, baseline, reconstructed" if self.method == "compl" else self.method
        return (
            f"{self.name} [{label}] runs={self.runs} seed={self.seed}\n"
            f"  Opt {self.opt:5d}  Sub-Opt {self.subopt:5d}  Inf {self.inf:5d}  "
            f"Avg cost {self.avg_cost:.4g}  Best {self.best_cost:.6g}\n"
            f"  Avg time {self.avg_time_ms:.1f} ms  Avg time (feas.) {self.avg_time_feas_ms:.1f} ms  "
            f"Max time {self.max_time_ms:.1f} ms"
        )


def report_csv(reports: Sequence[BenchReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()


def bench_problem(
    name: str,
    method: str = "smoothed",
    case: int = 1,
    share: bool = True,
    strictness: StrictnessMode | None = None,
) -> tuple[AssembledNlp, Formula]:
    if name == "quadrotor":
        base, formula = build_quadrotor()
    elif name == "twotank":
        base, formula = build_two_tank(case)
    else:
        raise ValueError(f"unknown benchmark {name!r}")
    config = ReformConfig(method=method, share=share)
    strictness = Epsilon() if strictness is None else strictness
    return build(base, formula, strictness, config), formula


def run_bench(
    name: str,
    method: str = "smoothed",
    runs: int = 100,
    seed: int = 0,
    case: int = 1,
    share: bool = True,
    strictness: StrictnessMode | None = None,
    opts: SolverOptions | None = None,
    best_cost: float | None = None,
    starts: Sequence[np.ndarray] | None = None,
) -> BenchReport:
    """Multistart a benchmark and classify every run against the original logic.

    ``best_cost`` fixes the optimality reference (e.g. the best over several
    methods); by default it is the best certified cost within this batch.
    ``starts`` replaces the random starting points.
    """
    opts = SolverOptions() if opts is None else opts
    nlp, formula = bench_problem(name, method, case, share, strictness)
    if starts is not None:
        outcomes = []
        for r, x0 in enumerate(starts):
            o = solve(nlp, x0, opts)
            o.run = r
            outcomes.append(o)
        runs = len(outcomes)
    else:
        outcomes = multistart(nlp, runs, seed, opts)
    best = best_feasible_cost(outcomes, formula, opts.feas_tol)
    report = BenchReport(
        name=name if name != "twotank" else f"twotank-case{case}",
        method=method,
        runs=runs,
        seed=seed,
        opt=0,
        subopt=0,
        inf=0,
        avg_cost=math.nan,
        best_cost=best,
        avg_time_ms=math.nan,
        avg_time_feas_ms=math.nan,
        max_time_ms=math.nan,
        config={
            "case": case, "share": share, "method": method,
            "strictness": type(strictness or Epsilon()).__name__,
            "feas_tol": opts.feas_tol, "opt_tol": opts.opt_tol, "max_iter": opts.max_iter,
        },
        outcomes=outcomes,
        formula=formula,
    )
    return rescore(report, best if best_cost is None else best_cost, opts.feas_tol)


def rescore(report: BenchReport, best_cost: float, feas_tol: float = 1e-6) -> BenchReport:
    """Reclassify the stored outcomes against ``best_cost`` and refresh the aggregates."""
    outcomes, formula = report.outcomes, report.formula
    classes = [classify(o, best_cost, formula, feas_tol) for o in outcomes]
    feas = [o for o, c in zip(outcomes, classes) if c != RunClass.INFEASIBLE]
    times = [o.time * 1e3 for o in outcomes]
    report.opt = sum(c == RunClass.OPTIMAL for c in classes)
    report.subopt = sum(c == RunClass.SUBOPTIMAL for c in classes)
    report.inf = sum(c == RunClass.INFEASIBLE for c in classes)
    report.avg_cost = float(np.mean([o.objective for o in feas])) if feas else math.nan
    report.avg_time_ms = float(np.mean(times)) if times else math.nan
    report.avg_time_feas_ms = float(np.mean([o.time * 1e3 for o in feas])) if feas else math.nan
    report.max_time_ms = max(times, default=math.nan)
    report.config = {**report.config, "reference_cost": best_cost}
    report.classes = [c.value for c in classes]
    report.objectives = [o.objective for o in outcomes]
    return report


def compare_methods(
    name: str,
    methods: Sequence[str],
    runs: int = 100,
    seed: int = 0,
    case: int = 1,
    share: bool = True,
    strictness: StrictnessMode | None = None,
    opts: SolverOptions | None = None,
) -> list[BenchReport]:
    """Run several methods with the same seed and one optimality reference.

    Every report is classified against the best certified cost found by
    any of the methods.
    """
    opts = SolverOptions() if opts is None else opts
    reports = [run_bench(name, m, runs, seed, case, share, strictness, opts) for m in methods]
    ref = min((r.best_cost for r in reports), default=math.inf)
    return [rescore(r, ref, opts.feas_tol) for r in reports]
