"""Logic formulas over smooth predicates and their rewriting into CNF.

A formula is built from :class:`Leaf` predicates (``p(z) <= 0`` or
``q(z) == 0``) combined with Boolean connectives and the finite-horizon
temporal operators :class:`Until` and :class:`Release`.  The passes here
reduce any such formula to a :class:`CnfProgram` whose literals are all
inequality predicates:

    expand_temporal -> eliminate_equalities -> to_nnf
        -> eliminate_negations -> to_cnf

:func:`eval_bool` is the reference semantics and never goes through any of
the passes; :func:`eval_maxmin` evaluates a CNF as ``max_i min_j p_ij(z)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import expr as ex
from .expr import Expr

__all__ = [
    "Predicate",
    "leq",
    "geq",
    "equals",
    "Leaf",
    "Not",
    "And",
    "Or",
    "Implies",
    "Iff",
    "Until",
    "Release",
    "Formula",
    "ExactEta",
    "Epsilon",
    "Closure",
    "StrictnessMode",
    "CnfProgram",
    "ClauseExplosion",
    "eliminate_equalities",
    "to_nnf",
    "eliminate_negations",
    "expand_temporal",
    "to_cnf",
    "compile_formula",
    "eval_bool",
    "eval_maxmin",
    "predicates_of",
    "ETA_BOUNDS",
]

INEQ = "ineq"
EQ = "eq"

ETA_BOUNDS = (-30.0, 10.0)


@dataclass(frozen=True, eq=False)
class Predicate:
    """``body(z) <= 0`` for kind ``"ineq"``, ``body(z) == 0`` for ``"eq"``.

    Compared by identity: two predicates with equal bodies are still
    different literals unless they are the same object.
    """

    body: Expr
    kind: str = INEQ
    name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in (INEQ, EQ):
            raise ValueError(f"predicate kind must be 'ineq' or 'eq', got {self.kind!r}")
        if not isinstance(self.body, Expr):
            object.__setattr__(self, "body", ex.as_expr(self.body))

    def value(self, z) -> float:
        return ex.evaluate(self.body, z)

    def __repr__(self) -> str:
        rel = "<= 0" if self.kind == INEQ else "== 0"
        return f"Predicate({self.name or self.body!r} {rel})"


# -- formula AST -----------------------------------------------------------


@dataclass(frozen=True)
class Leaf:
    pred: Predicate


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    args: tuple["Formula", ...]

    def __init__(self, *args) -> None:
        if len(args) == 1 and isinstance(args[0], (list, tuple)):
            args = tuple(args[0])
        object.__setattr__(self, "args", tuple(args))


@dataclass(frozen=True)
class Or:
    args: tuple["Formula", ...]

    def __init__(self, *args) -> None:
        if len(args) == 1 and isinstance(args[0], (list, tuple)):
            args = tuple(args[0])
        object.__setattr__(self, "args", tuple(args))


@dataclass(frozen=True)
class Implies:
    a: "Formula"
    b: "Formula"


@dataclass(frozen=True)
class Iff:
    a: "Formula"
    b: "Formula"


def _check_sequences(a, b, start) -> tuple[tuple, tuple]:
    a, b = tuple(a), tuple(b)
    if not a or len(a) != len(b):
        raise ValueError(f"operand sequences must be nonempty and equal length, got {len(a)}, {len(b)}")
    horizon = len(a) - 1
    if not 0 <= start <= horizon:
        raise ValueError(f"start index {start} outside horizon 0..{horizon}")
    return a, b


@dataclass(frozen=True)
class Until:
    """``a`` holds at every step from ``start`` until the first step where ``b`` holds.

    ``a[k]`` and ``b[k]`` are the formulas at time step ``k``; the horizon is
    ``N = len(a) - 1``.
    """

    a: tuple["Formula", ...]
    b: tuple["Formula", ...]
    start: int = 0

    def __post_init__(self) -> None:
        a, b = _check_sequences(self.a, self.b, self.start)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def horizon(self) -> int:
        return len(self.a) - 1


@dataclass(frozen=True)
class Release:
    """``b`` holds at every step up to and including the first step where ``a`` has held."""

    a: tuple["Formula", ...]
    b: tuple["Formula", ...]
    start: int = 0

    def __post_init__(self) -> None:
        a, b = _check_sequences(self.a, self.b, self.start)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def horizon(self) -> int:
        return len(self.a) - 1


Formula = Union[Leaf, Not, And, Or, Implies, Iff, Until, Release]


def leq(body, name: str = "") -> Leaf:
    """Leaf ``body <= 0``."""
    return Leaf(Predicate(ex.as_expr(body), INEQ, name))


def geq(body, name: str = "") -> Leaf:
    """Leaf ``body >= 0``, stored as ``-body <= 0``."""
    return Leaf(Predicate(-ex.as_expr(body), INEQ, name))


def equals(body, name: str = "") -> Leaf:
    """Leaf ``body == 0``."""
    return Leaf(Predicate(ex.as_expr(body), EQ, name))


def predicates_of(f: Formula) -> list[Predicate]:
    """Distinct predicates of ``f`` in first-appearance order."""
    seen: dict[int, Predicate] = {}

    def walk(g):
        if isinstance(g, Leaf):
            seen.setdefault(id(g.pred), g.pred)
        elif isinstance(g, Not):
            walk(g.arg)
        elif isinstance(g, (And, Or)):
            for a in g.args:
                walk(a)
        elif isinstance(g, (Implies, Iff)):
            walk(g.a)
            walk(g.b)
        elif isinstance(g, (Until, Release)):
            for a in g.a + g.b:
                walk(a)
        else:
            raise TypeError(f"not a formula: {g!r}")

    walk(f)
    return list(seen.values())


# -- strictness modes for negated inequalities ------------------------------


@dataclass(frozen=True)
class ExactEta:
    """``not (p <= 0)`` becomes ``-p + exp(eta) <= 0`` with a fresh variable ``eta``."""


@dataclass(frozen=True)
class Epsilon:
    """``not (p <= 0)`` becomes ``-p + eps <= 0``."""

    eps: float = 1e-8

    def __post_init__(self) -> None:
        if not self.eps > 0:
            raise ValueError(f"epsilon must be positive, got {self.eps}")


@dataclass(frozen=True)
class Closure:
    """``not (p <= 0)`` becomes ``-p <= 0``."""


StrictnessMode = Union[ExactEta, Epsilon, Closure]


# -- passes ----------------------------------------------------------------


def _rebuild(f: Formula, fn) -> Formula:
    """Apply ``fn`` to every child of ``f`` and rebuild the node."""
    if isinstance(f, Leaf):
        return f
    if isinstance(f, Not):
        return Not(fn(f.arg))
    if isinstance(f, And):
        return And(tuple(fn(a) for a in f.args))
    if isinstance(f, Or):
        return Or(tuple(fn(a) for a in f.args))
    if isinstance(f, Implies):
        return Implies(fn(f.a), fn(f.b))
    if isinstance(f, Iff):
        return Iff(fn(f.a), fn(f.b))
    if isinstance(f, Until):
        return Until(tuple(fn(a) for a in f.a), tuple(fn(b) for b in f.b), f.start)
    if isinstance(f, Release):
        return Release(tuple(fn(a) for a in f.a), tuple(fn(b) for b in f.b), f.start)
    raise TypeError(f"not a formula: {f!r}")


def eliminate_equalities(f: Formula) -> Formula:
    """Replace every equality leaf ``q == 0`` by ``(q <= 0) and (-q <= 0)``.

    Each equality predicate maps to one shared pair of new predicates, so
    repeated occurrences stay the same literals.
    """
    pairs: dict[int, And] = {}

    def go(g):
        if isinstance(g, Leaf):
            if g.pred.kind != EQ:
                return g
            q = g.pred
            if id(q) not in pairs:
                upper = Predicate(q.body, INEQ, f"{q.name}+" if q.name else "")
                lower = Predicate(-q.body, INEQ, f"{q.name}-" if q.name else "")
                pairs[id(q)] = And((Leaf(upper), Leaf(lower)))
            return pairs[id(q)]
        return _rebuild(g, go)

    return go(f)


def to_nnf(f: Formula) -> Formula:
    """Push negations down to the leaves with De Morgan's laws."""

    def go(g, negate: bool):
        if isinstance(g, Leaf):
            return Not(g) if negate else g
        if isinstance(g, Not):
            return go(g.arg, not negate)
        if isinstance(g, And):
            parts = tuple(go(a, negate) for a in g.args)
            return Or(parts) if negate else And(parts)
        if isinstance(g, Or):
            parts = tuple(go(a, negate) for a in g.args)
            return And(parts) if negate else Or(parts)
        raise ValueError(f"to_nnf expects only Leaf/Not/And/Or, found {type(g).__name__}")

    return go(f, False)


def eliminate_negations(
    f: Formula, mode: StrictnessMode | None = None, n_vars: int = 0
) -> tuple[Formula, int]:
    """Turn every negated inequality leaf into a plain inequality leaf.

    ``f`` must be in negation normal form over inequality predicates.  For
    :class:`ExactEta` the new variables take indices ``n_vars, n_vars + 1,
    ...``; the returned count says how many were appended (0 otherwise).
    """
    mode = Epsilon() if mode is None else mode
    if not isinstance(mode, (ExactEta, Epsilon, Closure)):
        raise TypeError(f"unknown strictness mode {mode!r}")
    negated: dict[int, Leaf] = {}

    def flip(p: Predicate) -> Leaf:
        if id(p) not in negated:
            if isinstance(mode, ExactEta):
                body = -p.body + ex.exp(ex.var(n_vars + len(negated)))
            elif isinstance(mode, Epsilon):
                body = -p.body + mode.eps
            else:
                body = -p.body
            negated[id(p)] = Leaf(Predicate(body, INEQ, f"~{p.name}" if p.name else ""))
        return negated[id(p)]

    def go(g):
        if isinstance(g, Leaf):
            if g.pred.kind != INEQ:
                raise ValueError("eliminate_negations expects inequality predicates only")
            return g
        if isinstance(g, Not):
            if not isinstance(g.arg, Leaf) or g.arg.pred.kind != INEQ:
                raise ValueError("eliminate_negations expects negation normal form")
            return flip(g.arg.pred)
        if isinstance(g, (And, Or)):
            return _rebuild(g, go)
        raise ValueError(f"eliminate_negations expects only Leaf/Not/And/Or, found {type(g).__name__}")

    out = go(f)
    return out, len(negated) if isinstance(mode, ExactEta) else 0


def _or(parts) -> Formula:
    parts = tuple(parts)
    return parts[0] if len(parts) == 1 else Or(parts)


def _and(parts) -> Formula:
    parts = tuple(parts)
    return parts[0] if len(parts) == 1 else And(parts)


def expand_temporal(f: Formula) -> Formula:
    """Rewrite implication, equivalence, until and release with Not/And/Or.

    Until from step ``i`` over horizon ``N`` becomes ``N - i + 1`` clauses::

        AND_{j=i}^{N-1} (a[j] or b[i] or ... or b[j])  and  (b[i] or ... or b[N])

    Release becomes ``AND_{j=i}^{N} (b[j] or a[i] or ... or a[j-1])``.
    """

    def go(g):
        g = _rebuild(g, go)
        if isinstance(g, Implies):
            return Or((Not(g.a), g.b))
        if isinstance(g, Iff):
            return And((Or((Not(g.a), g.b)), Or((Not(g.b), g.a))))
        if isinstance(g, Until):
            i, n = g.start, g.horizon
            clauses = [_or((g.a[j],) + g.b[i : j + 1]) for j in range(i, n)]
            clauses.append(_or(g.b[i : n + 1]))
            return _and(clauses)
        if isinstance(g, Release):
            i, n = g.start, g.horizon
            return _and(_or((g.b[j],) + g.a[i:j]) for j in range(i, n + 1))
        return g

    return go(f)


class ClauseExplosion(ValueError):
    """CNF distribution would exceed the clause limit."""


@dataclass(frozen=True)
class CnfProgram:
    """Conjunction of clauses; each clause is a disjunction of ``p(z) <= 0`` literals."""

    clauses: tuple[tuple[Predicate, ...], ...]

    def __post_init__(self) -> None:
        clauses = tuple(tuple(c) for c in self.clauses)
        for c in clauses:
            if not c:
                raise ValueError("empty clause")
            for p in c:
                if not isinstance(p, Predicate) or p.kind != INEQ:
                    raise ValueError(f"CNF literals must be inequality predicates, got {p!r}")
        object.__setattr__(self, "clauses", clauses)

    def __len__(self) -> int:
        return len(self.clauses)

    @property
    def n_and(self) -> int:
        return len(self.clauses) - 1

    def n_or(self, i: int) -> int:
        return len(self.clauses[i]) - 1

    def predicates(self) -> list[Predicate]:
        seen: dict[int, Predicate] = {}
        for c in self.clauses:
            for p in c:
                seen.setdefault(id(p), p)
        return list(seen.values())

    def literal_values(self, z) -> list[np.ndarray]:
        cache: dict[int, float] = {}
        out = []
        for c in self.clauses:
            vals = []
            for p in c:
                if id(p) not in cache:
                    cache[id(p)] = p.value(z)
                vals.append(cache[id(p)])
            out.append(np.array(vals))
        return out

    def dump(self) -> str:
        """One clause per line; literals are predicate ids (with names if any)."""
        ids = {id(p): k for k, p in enumerate(self.predicates())}
        lines = []
        for c in self.clauses:
            lits = []
            for p in c:
                lits.append(f"{ids[id(p)]}" + (f":{p.name}" if p.name else ""))
            lines.append(" ".join(lits))
        return "\n".join(lines) + ("\n" if lines else "")


def _dedup(clause) -> tuple[Predicate, ...]:
    seen: dict[int, Predicate] = {}
    for p in clause:
        seen.setdefault(id(p), p)
    return tuple(seen.values())


def _unique_clauses(clauses) -> list[tuple[Predicate, ...]]:
    seen = set()
    out = []
    for c in clauses:
        key = frozenset(id(p) for p in c)
        if key not in seen:
            seen.add(key)
            out.append(c)
    return out


def to_cnf(f: Formula, clause_limit: int = 10_000) -> CnfProgram:
    """Distribute Or over And, flatten, and drop repeated literals and clauses."""

    def go(g) -> list[tuple[Predicate, ...]]:
        if isinstance(g, Leaf):
            if g.pred.kind != INEQ:
                raise ValueError("to_cnf expects inequality predicates only")
            return [(g.pred,)]
        if isinstance(g, And):
            out: list = []
            for a in g.args:
                out.extend(go(a))
            if len(out) > clause_limit:
                raise ClauseExplosion(f"{len(out)} clauses exceed limit {clause_limit}")
            return _unique_clauses(out)
        if isinstance(g, Or):
            if not g.args:
                raise ValueError("empty disjunction cannot be satisfied")
            parts = [go(a) for a in g.args]
            total = 1
            for p in parts:
                total *= len(p)
                if total > clause_limit:
                    raise ClauseExplosion(
                        f"distributing a disjunction would produce more than {clause_limit} "
                        "clauses; restructure the logic (for example move shared "
                        "conditions outward) or raise the clause limit"
                    )
            combos = (_dedup(itertools.chain.from_iterable(c)) for c in itertools.product(*parts))
            return _unique_clauses(combos)
        raise ValueError(f"to_cnf expects only Leaf/And/Or, found {type(g).__name__}")

    return CnfProgram(tuple(go(f)))


def compile_formula(
    f: Formula,
    mode: StrictnessMode | None = None,
    n_vars: int = 0,
    clause_limit: int = 10_000,
) -> tuple[CnfProgram, int]:
    """Run every pass in order; returns the CNF and the number of eta variables added."""
    core = to_nnf(eliminate_equalities(expand_temporal(f)))
    core, n_eta = eliminate_negations(core, mode, n_vars)
    return to_cnf(core, clause_limit), n_eta


# -- semantics -------------------------------------------------------------


def eval_bool(f: Formula, z: Sequence[float], tol: float = 0.0) -> bool:
    """Reference truth value of ``f`` at ``z``.

    A leaf ``p <= 0`` is true when ``p(z) <= tol`` and an equality leaf when
    ``|q(z)| <= tol``.  Under an odd number of negations the tolerance works
    the other way (the leaf needs ``p(z) <= -tol``), so ``tol`` always
    relaxes the formula toward satisfaction.  With ``tol = 0`` this is the
    exact semantics.  Until and release use their quantified definitions,
    not the clause expansion.
    """
    cache: dict[int, float] = {}

    def val(p: Predicate) -> float:
        if id(p) not in cache:
            cache[id(p)] = p.value(z)
        return cache[id(p)]

    def truth(g, pos: bool) -> bool:
        if isinstance(g, Leaf):
            v = val(g.pred)
            t = tol if pos else -tol
            return v <= t if g.pred.kind == INEQ else abs(v) <= t
        if isinstance(g, Not):
            return not truth(g.arg, not pos)
        if isinstance(g, And):
            return all(truth(a, pos) for a in g.args)
        if isinstance(g, Or):
            return any(truth(a, pos) for a in g.args)
        if isinstance(g, Implies):
            return (not truth(g.a, not pos)) or truth(g.b, pos)
        if isinstance(g, Iff):
            return ((not truth(g.a, not pos)) or truth(g.b, pos)) and (
                (not truth(g.b, not pos)) or truth(g.a, pos)
            )
        if isinstance(g, Until):
            i, n = g.start, g.horizon
            return any(
                truth(g.b[j], pos) and all(truth(g.a[k], pos) for k in range(i, j))
                for j in range(i, n + 1)
            )
        if isinstance(g, Release):
            i, n = g.start, g.horizon
            return all(
                truth(g.b[j], pos) or any(truth(g.a[k], pos) for k in range(i, j))
                for j in range(i, n + 1)
            )
        raise TypeError(f"not a formula: {g!r}")

    return truth(f, True)


def eval_maxmin(c: CnfProgram, z: Sequence[float]) -> float:
    """``max`` over clauses of the ``min`` literal value; ``-inf`` for no clauses."""
    vals = c.literal_values(z)
    return max((float(v.min()) for v in vals), default=-np.inf)
