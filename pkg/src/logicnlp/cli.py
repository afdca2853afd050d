"""Command-line front end and the JSON problem file format.

A problem file is a JSON object::

    {
      "variables": [{"name": "z", "lower": -1, "upper": 1, "init": [-1, 1]}],
      "expressions": {"r2": ["add", ["pow", ["var", "z"], 2], ["const", 1.0]]},
      "objective": ["ref", "r2"],
      "equalities": [],
      "inequalities": [["sub", ["var", "z"], ["const", 0.5]]],
      "predicates": {"low": {"kind": "ineq", "body": ["var", "z"]}},
      "formula": ["or", ["pred", "low"], ["not", ["pred", "low"]]],
      "options": {"solver": {"max_iter": 200}, "reform": {"method": "smoothed"}}
    }

Expression trees are operator-tagged lists (see :func:`logicnlp.expr.to_tree`);
``["ref", name]`` points at a named expression defined earlier in
``expressions``.  Bounds may be ``null`` for an infinite bound.  Formula
nodes are ``pred``, ``not``, ``and``, ``or``, ``implies``, ``iff``,
``until`` and ``release``; the temporal nodes read
``["until", [a_0, ..., a_N], [b_0, ..., b_N], start]``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import re
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import expr as ex
from .bench import build_quadrotor, build_two_tank, compare_methods, report_csv
from .checks import run_suites
from .expr import Expr
from .logic import (
    And,
    ClauseExplosion,
    Closure,
    Epsilon,
    ExactEta,
    Formula,
    Iff,
    Implies,
    Leaf,
    Not,
    Or,
    Predicate,
    Release,
    StrictnessMode,
    Until,
    compile_formula,
    predicates_of,
)
from .nlp import (
    AssembledNlp,
    Problem,
    SolveOutcome,
    SolverOptions,
    best_feasible_cost,
    build,
    certified,
    multistart,
)
from .reform import METHODS, ReformConfig

__all__ = [
    "ProblemFileError",
    "ProblemFile",
    "formula_to_tree",
    "formula_from_tree",
    "problem_file_from",
    "bundled_problem",
    "trajectory_rows",
    "main",
]

BUNDLED = ("quadrotor", "twotank1", "twotank2")


class ProblemFileError(ValueError):
    """Malformed or inconsistent problem file; the message names the location."""


# -- formula trees ---------------------------------------------------------


def formula_to_tree(f: Formula, pred_names: dict[int, str]) -> list:
    """Operator-tagged list for ``f``; ``pred_names`` maps predicate ids to names."""
    if isinstance(f, Leaf):
        return ["pred", pred_names[id(f.pred)]]
    if isinstance(f, Not):
        return ["not", formula_to_tree(f.arg, pred_names)]
    if isinstance(f, (And, Or)):
        tag = "and" if isinstance(f, And) else "or"
        return [tag, *(formula_to_tree(a, pred_names) for a in f.args)]
    if isinstance(f, (Implies, Iff)):
        tag = "implies" if isinstance(f, Implies) else "iff"
        return [tag, formula_to_tree(f.a, pred_names), formula_to_tree(f.b, pred_names)]
    if isinstance(f, (Until, Release)):
        tag = "until" if isinstance(f, Until) else "release"
        return [
            tag,
            [formula_to_tree(a, pred_names) for a in f.a],
            [formula_to_tree(b, pred_names) for b in f.b],
            f.start,
        ]
    raise TypeError(f"not a formula: {f!r}")


def formula_from_tree(tree, preds: dict[str, Predicate], where: str = "formula") -> Formula:
    """Inverse of :func:`formula_to_tree`; leaves share one Leaf per predicate name."""
    leaves: dict[str, Leaf] = {}

    def go(t, path):
        if not isinstance(t, list) or not t or not isinstance(t[0], str):
            raise ProblemFileError(f"{path}: expected an operator-tagged list, got {t!r}")
        op, rest = t[0], t[1:]
        if op == "pred":
            if len(rest) != 1 or rest[0] not in preds:
                raise ProblemFileError(f"{path}: unknown predicate {rest[0] if rest else None!r}")
            if rest[0] not in leaves:
                leaves[rest[0]] = Leaf(preds[rest[0]])
            return leaves[rest[0]]
        if op == "not":
            if len(rest) != 1:
                raise ProblemFileError(f"{path}: 'not' takes one operand")
            return Not(go(rest[0], f"{path}[1]"))
        if op in ("and", "or"):
            if not rest:
                raise ProblemFileError(f"{path}: '{op}' needs at least one operand")
            parts = tuple(go(a, f"{path}[{i + 1}]") for i, a in enumerate(rest))
            return And(parts) if op == "and" else Or(parts)
        if op in ("implies", "iff"):
            if len(rest) != 2:
                raise ProblemFileError(f"{path}: '{op}' takes two operands")
            a, b = go(rest[0], f"{path}[1]"), go(rest[1], f"{path}[2]")
            return Implies(a, b) if op == "implies" else Iff(a, b)
        if op in ("until", "release"):
            if len(rest) != 3 or not isinstance(rest[0], list) or not isinstance(rest[1], list):
                raise ProblemFileError(f"{path}: '{op}' takes [a...], [b...], start")
            a = tuple(go(x, f"{path}[1][{i}]") for i, x in enumerate(rest[0]))
            b = tuple(go(x, f"{path}[2][{i}]") for i, x in enumerate(rest[1]))
            try:
                return (Until if op == "until" else Release)(a, b, int(rest[2]))
            except ValueError as err:
                raise ProblemFileError(f"{path}: {err}") from None
        raise ProblemFileError(f"{path}: unknown formula operator {op!r}")

    return go(tree, where)


# -- problem file ----------------------------------------------------------


def _bound(v, default: float) -> float:
    return default if v is None else float(v)


def _emit_bound(v: float):
    return None if math.isinf(v) else v


def _strictness_from(spec) -> StrictnessMode:
    if isinstance(spec, StrictnessMode.__args__):
        return spec
    if isinstance(spec, dict):
        mode, eps = spec.get("mode", "epsilon"), spec.get("eps")
    else:
        mode, eps = spec, None
    if mode == "exact":
        return ExactEta()
    if mode == "epsilon":
        return Epsilon() if eps is None else Epsilon(float(eps))
    if mode == "closure":
        return Closure()
    raise ProblemFileError(f"options.strictness: unknown mode {mode!r} (exact, epsilon, closure)")


@dataclass
class ProblemFile:
    """Parsed problem file.  Trees are kept as JSON-ready lists.

    Equality between two instances means the files are the same problem
    with the same options; ``from_json(to_json())`` reproduces the object.
    """

    variables: list[dict]
    objective: Any
    expressions: dict[str, Any] = field(default_factory=dict)
    equalities: list = field(default_factory=list)
    inequalities: list = field(default_factory=list)
    predicates: dict[str, dict] = field(default_factory=dict)
    formula: Any = None
    options: dict = field(default_factory=dict)

    # -- parsing --

    @classmethod
    def from_json(cls, text: str, source: str = "<problem>") -> "ProblemFile":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as err:
            raise ProblemFileError(f"{source}:{err.lineno}:{err.colno}: {err.msg}") from None
        return cls.from_dict(data, source)

    @classmethod
    def from_dict(cls, data: dict, source: str = "<problem>") -> "ProblemFile":
        if not isinstance(data, dict):
            raise ProblemFileError(f"{source}: top level must be an object")
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ProblemFileError(f"{source}: unknown keys {sorted(unknown)}")
        if "variables" not in data or "objective" not in data:
            raise ProblemFileError(f"{source}: 'variables' and 'objective' are required")
        variables = []
        for i, v in enumerate(data["variables"]):
            if not isinstance(v, dict) or not isinstance(v.get("name"), str):
                raise ProblemFileError(f"{source}: variables[{i}] needs a string 'name'")
            extra = set(v) - {"name", "lower", "upper", "init"}
            if extra:
                raise ProblemFileError(f"{source}: variables[{i}] has unknown keys {sorted(extra)}")
            entry = {"name": v["name"], "lower": v.get("lower"), "upper": v.get("upper")}
            if v.get("init") is not None:
                if not isinstance(v["init"], list) or len(v["init"]) != 2:
                    raise ProblemFileError(f"{source}: variables[{i}].init must be [low, high]")
                entry["init"] = [float(v["init"][0]), float(v["init"][1])]
            for key in ("lower", "upper"):
                if entry[key] is not None:
                    entry[key] = float(entry[key])
            variables.append(entry)
        pf = cls(
            variables=variables,
            objective=data["objective"],
            expressions=dict(data.get("expressions", {})),
            equalities=list(data.get("equalities", [])),
            inequalities=list(data.get("inequalities", [])),
            predicates={k: dict(v) for k, v in data.get("predicates", {}).items()},
            formula=data.get("formula"),
            options=dict(data.get("options", {})),
        )
        pf.build(source)  # resolve every reference now so errors surface at load time
        return pf

    @classmethod
    def load(cls, path: str | Path) -> "ProblemFile":
        p = Path(path)
        return cls.from_json(p.read_text(), str(p))

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"variables": [dict(v) for v in self.variables]}
        if self.expressions:
            out["expressions"] = dict(self.expressions)
        out["objective"] = self.objective
        out["equalities"] = list(self.equalities)
        out["inequalities"] = list(self.inequalities)
        if self.predicates:
            out["predicates"] = {k: dict(v) for k, v in self.predicates.items()}
        if self.formula is not None:
            out["formula"] = self.formula
        if self.options:
            out["options"] = dict(self.options)
        return out

    def to_json(self, indent: int | None = None) -> str:
        return json.dumps(self.to_dict(), indent=indent, allow_nan=False)

    # -- building --

    @property
    def names(self) -> list[str]:
        return [v["name"] for v in self.variables]

    def build(self, source: str = "<problem>") -> tuple[Problem, Formula | None]:
        """Base problem and formula with every reference resolved."""
        names = self.names
        if len(set(names)) != len(names):
            raise ProblemFileError(f"{source}: duplicate variable names")
        index = {n: i for i, n in enumerate(names)}
        refs: dict[str, Expr] = {}

        def tree(t, where):
            try:
                return ex.from_tree(t, index, refs)
            except (KeyError, ValueError, TypeError, IndexError) as err:
                msg = err.args[0] if err.args else err
                raise ProblemFileError(f"{source}: {where}: {msg}") from None

        for name, t in self.expressions.items():
            refs[name] = tree(t, f"expressions.{name}")
        objective = tree(self.objective, "objective")
        eqs = [tree(t, f"equalities[{i}]") for i, t in enumerate(self.equalities)]
        ineqs = [tree(t, f"inequalities[{i}]") for i, t in enumerate(self.inequalities)]
        lo = np.array([_bound(v["lower"], -np.inf) for v in self.variables])
        hi = np.array([_bound(v["upper"], np.inf) for v in self.variables])
        ilo = np.array([v["init"][0] if "init" in v else lo[i] for i, v in enumerate(self.variables)])
        ihi = np.array([v["init"][1] if "init" in v else hi[i] for i, v in enumerate(self.variables)])
        try:
            base = Problem(names, objective, lo, hi, ineqs, eqs, ilo, ihi)
        except ValueError as err:
            raise ProblemFileError(f"{source}: {err}") from None
        preds: dict[str, Predicate] = {}
        for name, p in self.predicates.items():
            kind = p.get("kind", "ineq")
            if kind not in ("ineq", "eq"):
                raise ProblemFileError(f"{source}: predicates.{name}: kind must be 'ineq' or 'eq'")
            preds[name] = Predicate(tree(p.get("body"), f"predicates.{name}.body"), kind, name)
        formula = None
        if self.formula is not None:
            formula = formula_from_tree(self.formula, preds, f"{source}: formula")
            top = ex.max_var_index([q.body for q in predicates_of(formula)])
            if top >= len(names):
                raise ProblemFileError(f"{source}: formula references variable {top}")
        return base, formula

    # -- options --

    def solver_options(self, **overrides) -> SolverOptions:
        known = {f.name for f in dataclasses.fields(SolverOptions)}
        given = dict(self.options.get("solver", {}))
        bad = set(given) - known
        if bad:
            raise ProblemFileError(f"options.solver: unknown keys {sorted(bad)}")
        given.update({k: v for k, v in overrides.items() if v is not None})
        return SolverOptions(**given)

    def reform_config(self, method: str | None = None, share: bool | None = None) -> ReformConfig:
        given = dict(self.options.get("reform", {}))
        if method is not None:
            given["method"] = method
        if share is not None:
            given["share"] = share
        try:
            return ReformConfig(**given)
        except (TypeError, ValueError) as err:
            raise ProblemFileError(f"options.reform: {err}") from None

    def strictness(self, override: str | None = None) -> StrictnessMode:
        return _strictness_from(override if override is not None else self.options.get("strictness", "epsilon"))


def problem_file_from(
    base: Problem,
    formula: Formula | None = None,
    options: dict | None = None,
) -> ProblemFile:
    """Serialize an in-memory problem (expressions are written out as plain trees)."""
    names = base.names
    variables = []
    for i, n in enumerate(names):
        v = {"name": n, "lower": _emit_bound(float(base.lower[i])), "upper": _emit_bound(float(base.upper[i]))}
        ilo, ihi = float(base.init_lower[i]), float(base.init_upper[i])
        if (ilo, ihi) != (float(base.lower[i]), float(base.upper[i])):
            v["init"] = [ilo, ihi]
        variables.append(v)
    preds: dict[str, dict] = {}
    pred_names: dict[int, str] = {}
    if formula is not None:
        for k, p in enumerate(predicates_of(formula)):
            name = p.name or f"p{k}"
            while name in preds:
                name = f"{name}_{k}"
            pred_names[id(p)] = name
            preds[name] = {"kind": p.kind, "body": ex.to_tree(p.body, names)}
    return ProblemFile(
        variables=variables,
        objective=ex.to_tree(base.objective, names),
        equalities=[ex.to_tree(e, names) for e in base.equalities],
        inequalities=[ex.to_tree(e, names) for e in base.inequalities],
        predicates=preds,
        formula=None if formula is None else formula_to_tree(formula, pred_names),
        options=dict(options or {}),
    )


def bundled_problem(name: str) -> ProblemFile:
    """One of the problem files shipped with the package (see ``BUNDLED``)."""
    if name not in BUNDLED:
        raise KeyError(f"no bundled problem {name!r}; choose from {BUNDLED}")
    text = resources.files("logicnlp").joinpath("data", f"{name}.json").read_text()
    return ProblemFile.from_json(text, f"<bundled {name}>")


def _bundled_builders():
    return {
        "quadrotor": build_quadrotor,
        "twotank1": lambda: build_two_tank(1),
        "twotank2": lambda: build_two_tank(2),
    }


def write_bundled(directory: str | Path) -> list[Path]:
    """Regenerate the bundled problem files from the benchmark builders."""
    out = []
    for name, builder in _bundled_builders().items():
        base, formula = builder()
        pf = problem_file_from(base, formula, {"reform": {"method": "smoothed", "share": True}})
        path = Path(directory) / f"{name}.json"
        path.write_text(pf.to_json() + "\n")
        out.append(path)
    return out


# -- outputs ---------------------------------------------------------------

_STEP = re.compile(r"^(.*?)_(\d+)$")


def trajectory_rows(nlp: AssembledNlp, x: np.ndarray) -> tuple[list[str], list[dict]]:
    """Base variables named ``<base>_<step>`` pivoted to one row per step.

    Variables without a step suffix are repeated on every row.  Returns
    the column names (``step`` first) and the rows.
    """
    steps: dict[int, dict[str, float]] = {}
    columns: list[str] = []
    flat: dict[str, float] = {}
    for i in range(nlp.n_base):
        name = nlp.names[i]
        m = _STEP.match(name)
        if m is None:
            flat[name] = float(x[i])
            continue
        col, k = m.group(1), int(m.group(2))
        if col not in columns:
            columns.append(col)
        steps.setdefault(k, {})[col] = float(x[i])
    columns += list(flat)
    rows = []
    for k in sorted(steps) or [0]:
        row = {"step": k, **steps.get(k, {}), **flat}
        rows.append(row)
    return ["step", *columns], rows


def _write_trajectory(path: Path, nlp: AssembledNlp, x: np.ndarray) -> None:
    cols, rows = trajectory_rows(nlp, x)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in cols})


def _outcome_record(o: SolveOutcome, nlp: AssembledNlp, formula: Formula | None, tol: float) -> dict:
    return {
        "run": o.run,
        "status": o.status.value,
        "certified": certified(o, formula, tol),
        "objective": o.objective,
        "violation": o.violation,
        "stationarity": o.stationarity,
        "complementarity": o.complementarity,
        "iterations": o.iterations,
        "time_s": o.time,
        "message": o.message,
        "point": {n: float(v) for n, v in zip(nlp.names, o.x)},
    }


# -- commands --------------------------------------------------------------


def _resolve_problem(arg: str) -> tuple[ProblemFile, str]:
    p = Path(arg)
    if p.exists():
        return ProblemFile.load(p), p.stem
    if arg in BUNDLED:
        return bundled_problem(arg), arg
    raise ProblemFileError(f"{arg}: no such file (bundled problems: {', '.join(BUNDLED)})")


def _solver_opts(pf: ProblemFile, args) -> SolverOptions:
    tol = args.tol
    return pf.solver_options(feas_tol=tol, opt_tol=tol, max_iter=args.max_iter)


def cmd_solve(args) -> int:
    pf, stem = _resolve_problem(args.problem)
    base, formula = pf.build()
    opts = _solver_opts(pf, args)
    config = pf.reform_config(args.method, False if args.no_share else None)
    try:
        nlp = build(base, formula, pf.strictness(args.strictness), config)
    except ClauseExplosion as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    runs = args.runs if args.runs is not None else int(pf.options.get("runs", 1))
    if runs < 1:
        print("error: --runs must be at least 1", file=sys.stderr)
        return 2
    # coordinates without a finite init box start from zero clipped into the bounds
    origin = np.clip(np.zeros(nlp.n), nlp.lower, nlp.upper)
    lo = np.where(np.isfinite(nlp.init_lower), nlp.init_lower, origin)
    hi = np.where(np.isfinite(nlp.init_upper), nlp.init_upper, origin)
    outcomes = multistart(nlp, runs, args.seed or 0, opts, (lo, hi))
    tol = opts.feas_tol
    ok = [o for o in outcomes if certified(o, formula, tol)]
    best = min(ok, key=lambda o: (o.objective, o.run)) if ok else min(outcomes, key=lambda o: (o.violation, o.run))
    print(f"problem {stem}: {nlp.n} variables, {len(nlp.equalities)} equalities, "
          f"{len(nlp.inequalities)} inequalities, method {config.method}")
    print(f"runs {len(outcomes)}  certified {len(ok)}  best objective "
          f"{best_feasible_cost(outcomes, formula, tol):.8g}")
    print(f"selected run {best.run}: {best.status.value}, objective {best.objective:.8g}, "
          f"violation {best.violation:.2e}, stationarity {best.stationarity:.2e}, "
          f"iterations {best.iterations}, {best.time * 1e3:.1f} ms ({best.message})")
    traj = Path(args.trajectory) if args.trajectory else Path(f"{stem}.trajectory.csv")
    _write_trajectory(traj, nlp, best.x)
    print(f"trajectory written to {traj}")
    if args.report:
        record = {
            "problem": stem,
            "method": config.method,
            "share": config.share,
            "seed": args.seed or 0,
            "runs": [_outcome_record(o, nlp, formula, tol) for o in outcomes],
            "selected": best.run,
        }
        Path(args.report).write_text(json.dumps(record, indent=1) + "\n")
        print(f"report written to {args.report}")
    return 0 if ok else 1


def cmd_bench(args) -> int:
    methods = list(METHODS) if args.method == "all" else [args.method or "smoothed"]
    opts = SolverOptions(
        **{k: v for k, v in (("feas_tol", args.tol), ("opt_tol", args.tol), ("max_iter", args.max_iter)) if v is not None}
    )
    strictness = _strictness_from(args.strictness or "epsilon")
    seed = args.seed or 0
    runs = 100 if args.runs is None else args.runs
    reports = compare_methods(args.name, methods, runs, seed, args.case, not args.no_share, strictness, opts)
    for r in reports:
        print(r.table())
    if args.report:
        Path(args.report).write_text(report_csv(reports))
        print(f"report written to {args.report}")
    return 0


def cmd_verify(args) -> int:
    trials = 100 if args.trials is None else args.trials
    results = run_suites(trials, args.seed or 0)
    for r in results:
        print(f"{r.name:10s} {r.passed:5d}/{r.total:<5d} {'pass' if r.ok else 'FAIL'}")
        for f in r.failures[:5]:
            print(f"    failed: {f}")
    ok = all(r.ok for r in results)
    print("all suites passed" if ok else "some suites failed")
    return 0 if ok else 1


def cmd_dump_cnf(args) -> int:
    pf, stem = _resolve_problem(args.problem)
    base, formula = pf.build()
    if formula is None:
        print(f"{stem}: no logic formula")
        return 0
    try:
        cnf, n_eta = compile_formula(formula, pf.strictness(args.strictness), base.n)
    except ClauseExplosion as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    preds = cnf.predicates()
    print(f"{stem}: {len(cnf)} clauses over {len(preds)} literals, {n_eta} eta variables")
    print(cnf.dump(), end="")
    if args.report:
        lines = [f"{k}\t{p.name}\t{json.dumps(ex.to_tree(p.body, pf.names + [f'eta{i}' for i in range(n_eta)]))}"
                 for k, p in enumerate(preds)]
        Path(args.report).write_text("\n".join(lines) + "\n")
        print(f"literal table written to {args.report}")
    return 0


# -- argument parsing ------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol", type=float, default=None, help="feasibility and optimality tolerance (default 1e-6)")
    common.add_argument("--max-iter", type=int, default=None, help="solver iteration limit (default 500)")
    common.add_argument("--strictness", choices=("exact", "epsilon", "closure"), default=None,
                        help="treatment of negated inequalities (default epsilon)")
    common.add_argument("--seed", type=int, default=None, help="multistart seed (default 0)")
    common.add_argument("--runs", type=int, default=None, help="number of multistart runs")
    common.add_argument("--method", choices=(*METHODS, "all"), default=None, help="logic reformulation")
    common.add_argument("--no-share", action="store_true", help="one simplex block per clause")
    common.add_argument("--report", default=None, help="write a machine-readable report here")

    p = argparse.ArgumentParser(prog="logicnlp", description="Logic-constrained nonlinear programs without binaries.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve a problem file")
    s.add_argument("problem", help=f"problem file, or a bundled name ({', '.join(BUNDLED)})")
    s.add_argument("--trajectory", default=None, help="trajectory CSV path (default <problem>.trajectory.csv)")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", parents=[common], help="run a benchmark multistart")
    b.add_argument("name", choices=("quadrotor", "twotank"))
    b.add_argument("--case", type=int, choices=(1, 2), default=1, help="two-tank case")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", parents=[common], help="run the randomized self-check suites")
    v.add_argument("--trials", type=int, default=None, help="random cases per suite (default 100)")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("dump-cnf", parents=[common], help="print the clause form of a problem's logic")
    d.add_argument("problem")
    d.set_defaults(func=cmd_dump_cnf)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ProblemFileError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
