"""Turn a CNF program into smooth NLP constraints.

``smooth`` is the exact simplex-weighted reformulation: every clause
``p_0 <= 0 or ... or p_k <= 0`` becomes ``sum_j lam_j p_j(z) <= 0`` with
``lam`` in the probability simplex.  ``bigm`` and ``complementarity`` are
the comparison baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as ex
from .expr import Expr
from .logic import CnfProgram, Predicate

__all__ = [
    "SimplexBlock",
    "SmoothedConstraint",
    "ClauseGroup",
    "ReformConfig",
    "LogicConstraints",
    "detect_shared_lambda",
    "smooth",
    "recover_lambda",
    "lambda_point",
    "bigm",
    "complementarity",
    "reformulate",
    "METHODS",
]

METHODS = ("smoothed", "bigm", "compl")


@dataclass(frozen=True)
class SimplexBlock:
    """Variables ``indices`` constrained to the probability simplex."""

    id: int
    indices: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class SmoothedConstraint:
    """``sum_k lam[block.indices[coord_k]] * p_k(z) <= 0``.

    With ``block`` None the constraint is a single literal ``p(z) <= 0``.
    """

    block: SimplexBlock | None
    terms: tuple[tuple[int, Predicate], ...]
    clause: int

    def expression(self) -> Expr:
        if self.block is None:
            return self.terms[0][1].body
        out = None
        for coord, p in self.terms:
            t = ex.var(self.block.indices[coord]) * p.body
            out = t if out is None else out + t
        return out


@dataclass(frozen=True)
class ClauseGroup:
    """Clauses sharing one simplex block.

    ``shared`` are the literals common to every member (they take the first
    block coordinates); each member adds exactly one ``varying`` literal at
    the last coordinate.  A group without ``shared`` literals holds a
    single clause.
    """

    members: tuple[int, ...]
    shared: tuple[Predicate, ...] = ()
    varying: tuple[Predicate, ...] = ()

    @property
    def is_shared(self) -> bool:
        return len(self.members) > 1


def detect_shared_lambda(c: CnfProgram) -> list[ClauseGroup]:
    """Group clauses that differ from each other in exactly one literal.

    First-fit over clauses in order: a clause joins the first open group of
    the same arity whose common literals it contains.  Clauses of arity one
    are never grouped.
    """
    # each open group: [arity, shared id set or None, reference clause, member list]
    open_groups: list[list] = []
    for idx, clause in enumerate(c.clauses):
        k = len(clause)
        ids = {id(p) for p in clause}
        placed = False
        if k >= 2:
            for grp in open_groups:
                arity, shared, ref, members = grp
                if arity != k:
                    continue
                if shared is None:
                    common = ids & {id(p) for p in ref}
                    if len(common) == k - 1:
                        grp[1] = common
                        members.append(idx)
                        placed = True
                        break
                elif shared <= ids:
                    members.append(idx)
                    placed = True
                    break
        if not placed:
            open_groups.append([k, None, clause, [idx]])

    groups = []
    for arity, shared, ref, members in open_groups:
        if shared is None:
            groups.append(ClauseGroup((members[0],)))
            continue
        shared_preds = tuple(p for p in ref if id(p) in shared)
        varying = tuple(
            next(p for p in c.clauses[m] if id(p) not in shared) for m in members
        )
        groups.append(ClauseGroup(tuple(members), shared_preds, varying))
    return groups


def _singleton_groups(c: CnfProgram) -> list[ClauseGroup]:
    return [ClauseGroup((i,)) for i in range(len(c.clauses))]


def smooth(
    c: CnfProgram, share: bool = False, offset: int = 0
) -> tuple[list[SmoothedConstraint], list[SimplexBlock]]:
    """Simplex-weighted constraints for every clause.

    New simplex variables take indices from ``offset`` upward, block by
    block in clause order.  Returned constraints follow clause order.
    """
    groups = detect_shared_lambda(c) if share else _singleton_groups(c)
    cons: list[SmoothedConstraint] = []
    blocks: list[SimplexBlock] = []
    nxt = offset
    for grp in groups:
        if not grp.is_shared:
            clause = c.clauses[grp.members[0]]
            if len(clause) == 1:
                cons.append(SmoothedConstraint(None, ((0, clause[0]),), grp.members[0]))
                continue
            block = SimplexBlock(len(blocks), tuple(range(nxt, nxt + len(clause))))
            nxt += len(clause)
            blocks.append(block)
            terms = tuple((j, p) for j, p in enumerate(clause))
            cons.append(SmoothedConstraint(block, terms, grp.members[0]))
            continue
        k = len(grp.shared) + 1
        block = SimplexBlock(len(blocks), tuple(range(nxt, nxt + k)))
        nxt += k
        blocks.append(block)
        head = tuple((j, p) for j, p in enumerate(grp.shared))
        for m, d in zip(grp.members, grp.varying):
            cons.append(SmoothedConstraint(block, head + ((k - 1, d),), m))
    cons.sort(key=lambda s: s.clause)
    return cons, blocks


def recover_lambda(
    c: CnfProgram, z: Sequence[float], groups: list[ClauseGroup] | None = None
) -> list[np.ndarray] | None:
    """Simplex weights satisfying every smoothed constraint at ``z``, or None.

    One weight vector per group (per clause when ``groups`` is None, in which
    case single-literal clauses get a length-1 vector).  Each vector is the
    indicator of a satisfied literal; ties go to the lowest index.  Returns
    None exactly when some clause has no satisfied literal.
    """
    groups = _singleton_groups(c) if groups is None else groups
    vals = c.literal_values(z)
    out = []
    for grp in groups:
        if not grp.is_shared:
            v = vals[grp.members[0]]
            j = int(np.argmin(v))
            if v[j] > 0:
                return None
            lam = np.zeros(len(v))
            lam[j] = 1.0
            out.append(lam)
            continue
        ref = vals[grp.members[0]]
        pos = {id(p): j for j, p in enumerate(c.clauses[grp.members[0]])}
        shared_vals = np.array([ref[pos[id(p)]] for p in grp.shared])
        lam = np.zeros(len(grp.shared) + 1)
        j = int(np.argmin(shared_vals))
        if shared_vals[j] <= 0:
            lam[j] = 1.0
        else:
            cache = {id(p): float(v) for m in grp.members
                     for p, v in zip(c.clauses[m], vals[m])}
            if max(cache[id(d)] for d in grp.varying) > 0:
                return None
            lam[-1] = 1.0
        out.append(lam)
    return out


def lambda_point(
    blocks: list[SimplexBlock], witness: list[np.ndarray], n: int
) -> np.ndarray:
    """Scatter per-block weights into a length-``n`` vector (zeros elsewhere).

    ``witness`` must come from :func:`recover_lambda` with the same grouping
    that produced ``blocks``; entries for blockless single-literal clauses
    are skipped.
    """
    x = np.zeros(n)
    it = iter(blocks)
    for w in witness:
        if len(w) == 1:
            continue
        b = next(it)
        x[list(b.indices)] = w
    return x


@dataclass(frozen=True)
class ReformConfig:
    method: str = "smoothed"
    share: bool = False
    big_m: float = 1e6
    compl_m: float = 1e6

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.big_m > 0 or not self.compl_m > 0:
            raise ValueError("Big-M constants must be positive")


@dataclass
class LogicConstraints:
    """Auxiliary variables and constraints emitted for a CNF program.

    Variables occupy indices ``offset .. offset + n_aux - 1``; inequalities
    are ``expr <= 0`` and equalities ``expr == 0``.
    """

    method: str
    offset: int
    names: list[str] = field(default_factory=list)
    lower: list[float] = field(default_factory=list)
    upper: list[float] = field(default_factory=list)
    init_lower: list[float] = field(default_factory=list)
    init_upper: list[float] = field(default_factory=list)
    inequalities: list[Expr] = field(default_factory=list)
    equalities: list[Expr] = field(default_factory=list)
    smoothed: list[SmoothedConstraint] = field(default_factory=list)
    blocks: list[SimplexBlock] = field(default_factory=list)
    groups: list[ClauseGroup] = field(default_factory=list)

    @property
    def n_aux(self) -> int:
        return len(self.names)

    def _add(self, name, lo, hi, init_lo, init_hi) -> int:
        self.names.append(name)
        self.lower.append(lo)
        self.upper.append(hi)
        self.init_lower.append(init_lo)
        self.init_upper.append(init_hi)
        return self.offset + len(self.names) - 1


def _smoothed_constraints(c: CnfProgram, share: bool, offset: int) -> LogicConstraints:
    out = LogicConstraints("smoothed", offset)
    cons, blocks = smooth(c, share, offset)
    out.groups = detect_shared_lambda(c) if share else _singleton_groups(c)
    for b in blocks:
        for j, _ in enumerate(b.indices):
            out._add(f"lam{b.id}_{j}", 0.0, 1.0, 0.0, 1.0)
        total = ex.var(b.indices[0])
        for i in b.indices[1:]:
            total = total + ex.var(i)
        out.equalities.append(total - 1.0)
    out.smoothed = cons
    out.blocks = blocks
    out.inequalities = [s.expression() for s in cons]
    return out


def bigm(c: CnfProgram, M: float = 1e6, offset: int = 0) -> LogicConstraints:
    """``p_j <= mu_j * M`` with ``mu_j`` in [0, 1] and ``prod_j mu_j == 0`` per clause."""
    if not M > 0:
        raise ValueError(f"M must be positive, got {M}")
    out = LogicConstraints("bigm", offset)
    for i, clause in enumerate(c.clauses):
        mus = [out._add(f"mu{i}_{j}", 0.0, 1.0, 0.0, 1.0) for j in range(len(clause))]
        prod = None
        for p, m in zip(clause, mus):
            out.inequalities.append(p.body - M * ex.var(m))
            prod = ex.var(m) if prod is None else prod * ex.var(m)
        out.equalities.append(prod)
    return out


def complementarity(c: CnfProgram, M: float = 1e6, offset: int = 0) -> LogicConstraints:
    """Selector per literal: ``b(b - 1) == 0``, ``sum b >= 1``, ``p <= (1 - b) M``.

    Selectors are free variables; only the complementarity equality makes
    them binary.
    """
    if not M > 0:
        raise ValueError(f"M must be positive, got {M}")
    out = LogicConstraints("compl", offset)
    inf = np.inf
    for i, clause in enumerate(c.clauses):
        sel = [out._add(f"b{i}_{j}", -inf, inf, 0.0, 1.0) for j in range(len(clause))]
        total = None
        for p, b in zip(clause, sel):
            bv = ex.var(b)
            out.equalities.append(bv * (bv - 1.0))
            out.inequalities.append(p.body - M * (1.0 - bv))
            total = bv if total is None else total + bv
        out.inequalities.append(1.0 - total)
    return out


def reformulate(c: CnfProgram, config: ReformConfig, offset: int) -> LogicConstraints:
    if config.method == "smoothed":
        return _smoothed_constraints(c, config.share, offset)
    if config.method == "bigm":
        return bigm(c, config.big_m, offset)
    return complementarity(c, config.compl_m, offset)
