"""Randomized self-checks behind the ``verify`` command.

Each suite draws ``trials`` random cases from a seeded generator and
returns how many passed.  The suites compare independent routes to the
same answer: reference semantics against every rewriting pass, CNF truth
against the max-min value, recovered simplex weights against the smoothed
constraints, clause expansions of the temporal operators against their
quantified definitions, and compiled derivatives against finite
differences.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import expr as ex
from .expr import CompiledBatch, Expr
from .logic import (
    And,
    ClauseExplosion,
    Closure,
    CnfProgram,
    Formula,
    Iff,
    Implies,
    Leaf,
    Not,
    Or,
    Release,
    Until,
    eliminate_equalities,
    eliminate_negations,
    eval_bool,
    eval_maxmin,
    expand_temporal,
    leq,
    equals,
    predicates_of,
    to_cnf,
    to_nnf,
)
from .reform import detect_shared_lambda, lambda_point, recover_lambda, smooth

__all__ = [
    "SuiteResult",
    "random_polynomial",
    "random_formula",
    "cnf_formula",
    "check_passes",
    "check_cnf",
    "check_lambda",
    "check_temporal",
    "check_gradients",
    "SUITES",
    "run_suites",
]

N_VARS = 3
# samples with a literal this close to zero are skipped: the rewritten
# strict inequalities differ from the reference only inside this band
MARGIN = 1e-6


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: int
    total: int
    failures: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.passed == self.total


def random_polynomial(rng: np.random.Generator, n_vars: int = N_VARS, degree: int = 2) -> Expr:
    """Dense polynomial of total degree ``degree`` with normal coefficients."""
    out: Expr = ex.const(float(rng.normal()))
    for d in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_vars), d):
            term: Expr = ex.const(float(rng.normal()))
            for i in combo:
                term = term * ex.var(i)
            out = out + term
    return out


def random_formula(
    rng: np.random.Generator,
    max_leaves: int = 12,
    n_vars: int = N_VARS,
    eq_prob: float = 0.0,
    temporal: bool = False,
) -> Formula:
    """Random formula over fresh polynomial predicates.

    Leaves may repeat an earlier predicate so literals get shared.
    """
    pool: list[Leaf] = []
    budget = [int(rng.integers(1, max_leaves + 1))]

    def leaf() -> Formula:
        budget[0] -= 1
        if pool and rng.random() < 0.2:
            return pool[int(rng.integers(len(pool)))]
        body = random_polynomial(rng, n_vars)
        f = equals(body, f"q{len(pool)}") if rng.random() < eq_prob else leq(body, f"p{len(pool)}")
        pool.append(f)
        return f

    def node(depth: int) -> Formula:
        if budget[0] <= 1 or depth > 5 or rng.random() < 0.25:
            return leaf()
        kinds = ["and", "or", "not", "implies", "iff"] + (["until", "release"] if temporal else [])
        kind = kinds[int(rng.integers(len(kinds)))]
        if kind == "not":
            return Not(node(depth + 1))
        if kind in ("implies", "iff"):
            a = node(depth + 1)
            b = node(depth + 1)
            return Implies(a, b) if kind == "implies" else Iff(a, b)
        if kind in ("until", "release"):
            horizon = int(rng.integers(0, 3))
            a = tuple(leaf() for _ in range(horizon + 1))
            b = tuple(leaf() for _ in range(horizon + 1))
            start = int(rng.integers(0, horizon + 1))
            return Until(a, b, start) if kind == "until" else Release(a, b, start)
        k = int(rng.integers(2, 4))
        parts = tuple(node(depth + 1) for _ in range(k))
        return And(parts) if kind == "and" else Or(parts)

    return node(0)


def cnf_formula(c: CnfProgram) -> Formula:
    """A CNF program as a plain And-of-Or formula over the same predicates."""
    return And(tuple(Or(tuple(Leaf(p) for p in clause)) for clause in c.clauses))


def _clear(f: Formula, z: np.ndarray) -> bool:
    return all(abs(p.value(z)) >= MARGIN for p in predicates_of(f))


def _sample(rng: np.random.Generator, n_vars: int = N_VARS) -> np.ndarray:
    return rng.uniform(-2.0, 2.0, n_vars)


def _points(rng, f: Formula, count: int = 10, tries: int = 50) -> list[np.ndarray]:
    out = []
    for _ in range(tries):
        if len(out) == count:
            break
        z = _sample(rng)
        if _clear(f, z):
            out.append(z)
    return out


def _draw_cnf(rng: np.random.Generator, limit: int = 2000) -> tuple[Formula, Formula, CnfProgram]:
    """Random formula, its negation-free core and CNF; redraws when the CNF gets too large."""
    while True:
        f = random_formula(rng)
        core, _ = eliminate_negations(to_nnf(eliminate_equalities(expand_temporal(f))), Closure())
        try:
            return f, core, to_cnf(core, limit)
        except ClauseExplosion:
            continue


def check_passes(trials: int, seed: int = 0) -> SuiteResult:
    """Every rewriting pass preserves the reference truth value."""
    rng = np.random.default_rng([seed, 1])
    passed, fails = 0, []
    for t in range(trials):
        f = random_formula(rng, eq_prob=0.2, temporal=True)
        stages = [expand_temporal(f)]
        stages.append(eliminate_equalities(stages[-1]))
        stages.append(to_nnf(stages[-1]))
        stages.append(eliminate_negations(stages[-1], Closure())[0])
        zs = _points(rng, stages[-1], 5)
        ok = True
        for z in zs:
            ref = eval_bool(f, z)
            if any(eval_bool(g, z) != ref for g in stages):
                ok = False
                break
        passed += ok
        if not ok:
            fails.append(f"trial {t}")
    return SuiteResult("passes", passed, trials, tuple(fails))


def check_cnf(trials: int, seed: int = 0) -> SuiteResult:
    """CNF truth, max-min value and reference semantics agree."""
    rng = np.random.default_rng([seed, 2])
    passed, fails = 0, []
    for t in range(trials):
        f, core, c = _draw_cnf(rng)
        g = cnf_formula(c)
        ok = True
        for z in _points(rng, core):
            ref = eval_bool(f, z)
            if (eval_maxmin(c, z) <= 0) != ref or eval_bool(g, z) != ref:
                ok = False
                break
        passed += ok
        if not ok:
            fails.append(f"trial {t}")
    return SuiteResult("cnf", passed, trials, tuple(fails))


def check_lambda(trials: int, seed: int = 0) -> SuiteResult:
    """Simplex weights exist exactly when the CNF holds and satisfy every smoothed row."""
    rng = np.random.default_rng([seed, 3])
    passed, fails = 0, []
    for t in range(trials):
        f, core, c = _draw_cnf(rng)
        share = bool(rng.random() < 0.5)
        groups = detect_shared_lambda(c) if share else None
        cons, blocks = smooth(c, share, offset=N_VARS)
        ok = True
        for z in _points(rng, core):
            w = recover_lambda(c, z, groups)
            holds = eval_maxmin(c, z) <= 0
            if (w is not None) != holds:
                ok = False
                break
            if w is None:
                continue
            x = lambda_point(blocks, w, N_VARS + sum(b.size for b in blocks))
            x[:N_VARS] = z
            if any(ex.evaluate(s.expression(), x) > 0 for s in cons):
                ok = False
                break
        passed += ok
        if not ok:
            fails.append(f"trial {t}")
    return SuiteResult("lambda", passed, trials, tuple(fails))


def _until_truth(a, b, i) -> bool:
    n = len(a) - 1
    return any(b[j] and all(a[i:j]) for j in range(i, n + 1))


def _release_truth(a, b, i) -> bool:
    n = len(a) - 1
    return all(b[j] or any(a[i:j]) for j in range(i, n + 1))


def check_temporal(trials: int, seed: int = 0, max_horizon: int = 6) -> SuiteResult:
    """Clause expansions of until and release match their definitions."""
    rng = np.random.default_rng([seed, 4])
    passed, fails = 0, []
    for t in range(trials):
        n = int(rng.integers(0, max_horizon + 1))
        i = int(rng.integers(0, n + 1))
        a = tuple(leq(ex.var(k), f"a{k}") for k in range(n + 1))
        b = tuple(leq(ex.var(n + 1 + k), f"b{k}") for k in range(n + 1))
        bits = rng.random(2 * (n + 1)) < 0.5
        z = np.where(bits, -1.0, 1.0)
        av, bv = list(bits[: n + 1]), list(bits[n + 1 :])
        ok = True
        for op, truth in ((Until, _until_truth), (Release, _release_truth)):
            f = op(a, b, i)
            expected = truth(av, bv, i)
            if eval_bool(f, z) != expected or eval_bool(expand_temporal(f), z) != expected:
                ok = False
        passed += ok
        if not ok:
            fails.append(f"trial {t} (N={n}, start={i})")
    return SuiteResult("temporal", passed, trials, tuple(fails))


def _random_smooth_expr(rng: np.random.Generator, depth: int = 0) -> Expr:
    if depth > 3 or rng.random() < 0.3:
        if rng.random() < 0.7:
            return ex.var(int(rng.integers(N_VARS)))
        return ex.const(float(rng.normal()))
    op = ["add", "sub", "mul", "sin", "cos", "exp", "sqrt", "square"][int(rng.integers(8))]
    a = _random_smooth_expr(rng, depth + 1)
    if op == "add":
        return a + _random_smooth_expr(rng, depth + 1)
    if op == "sub":
        return a - _random_smooth_expr(rng, depth + 1)
    if op == "mul":
        return a * _random_smooth_expr(rng, depth + 1)
    if op == "sqrt":
        return ex.sqrt(a * a + 1.0)
    if op == "exp":
        return ex.exp(ex.sin(a))
    if op == "square":
        return a**2
    return ex.sin(a) if op == "sin" else ex.cos(a)


def check_gradients(trials: int, seed: int = 0, rel_tol: float = 1e-5) -> SuiteResult:
    """Reference and compiled gradients agree with central differences."""
    rng = np.random.default_rng([seed, 5])
    passed, fails = 0, []
    h = 1e-6
    for t in range(trials):
        e = _random_smooth_expr(rng)
        z = _sample(rng)
        fd = np.empty(N_VARS)
        for j in range(N_VARS):
            up, dn = z.copy(), z.copy()
            up[j] += h
            dn[j] -= h
            fd[j] = (ex.evaluate(e, up) - ex.evaluate(e, dn)) / (2 * h)
        ref = ex.gradient(e, z)
        batch = CompiledBatch([e], N_VARS)
        comp = np.zeros(N_VARS)
        np.add.at(comp, batch.cols, batch.jacobian(z))
        scale = max(1.0, float(np.max(np.abs(fd))))
        ok = bool(
            np.max(np.abs(ref - fd)) <= rel_tol * scale and np.max(np.abs(comp - ref)) <= 1e-12 * scale
        )
        passed += ok
        if not ok:
            fails.append(f"trial {t}")
    return SuiteResult("gradients", passed, trials, tuple(fails))


SUITES: dict[str, Callable[[int, int], SuiteResult]] = {
    "passes": check_passes,
    "cnf": check_cnf,
    "lambda": check_lambda,
    "temporal": check_temporal,
    "gradients": check_gradients,
}


def run_suites(trials: int, seed: int = 0) -> list[SuiteResult]:
    if trials < 0:
        raise ValueError(f"trials must be non-negative, got {trials}")
    return [fn(trials, seed) for fn in SUITES.values()]
