import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logicnlp import expr as ex
from logicnlp.checks import random_formula
from logicnlp.logic import (
    And,
    ClauseExplosion,
    Closure,
    CnfProgram,
    Epsilon,
    ExactEta,
    Iff,
    Implies,
    Leaf,
    Not,
    Or,
    Predicate,
    Release,
    Until,
    compile_formula,
    eliminate_equalities,
    eliminate_negations,
    equals,
    eval_bool,
    eval_maxmin,
    expand_temporal,
    leq,
    predicates_of,
    to_cnf,
    to_nnf,
)

z0 = ex.var(0)


def clause_sets(c: CnfProgram) -> set[frozenset[int]]:
    return {frozenset(id(p) for p in clause) for clause in c.clauses}


def boolean_leaves(n: int) -> list[Leaf]:
    # leaf k is true exactly when variable k is negative
    return [leq(ex.var(k), f"b{k}") for k in range(n)]


def assignments(n: int):
    for bits in itertools.product((False, True), repeat=n):
        yield bits, np.where(bits, -1.0, 1.0)


def test_equality_split():
    q = equals(z0, "q")
    out = eliminate_equalities(q)
    assert isinstance(out, And) and len(out.args) == 2
    lo, hi = out.args
    assert lo.pred.kind == hi.pred.kind == "ineq"
    assert ex.evaluate(lo.pred.body, [2.0]) == 2.0
    assert ex.evaluate(hi.pred.body, [2.0]) == -2.0


def test_no_equalities_unchanged():
    f = Or((leq(z0), Not(leq(z0 - 1.0))))
    assert eliminate_equalities(f) == f


def test_equality_in_disjunction_agrees():
    f = Or((equals(z0 - 1.0, "q1"), leq(z0, "p1")))
    g = eliminate_equalities(f)
    rng = np.random.default_rng(0)
    zs = list(rng.uniform(-3, 3, 1000)) + [1.0]
    for z in zs:
        assert eval_bool(g, [z]) == eval_bool(f, [z])
    assert eval_bool(g, [1.0])


def test_nnf_rules():
    p1, p2, p3 = boolean_leaves(3)
    assert to_nnf(Not(And((p1, p2)))) == Or((Not(p1), Not(p2)))
    assert to_nnf(Not(Not(p1))) == p1
    f = Not(Or((p1, And((p2, p3)))))
    g = to_nnf(f)
    assert g == And((Not(p1), Or((Not(p2), Not(p3)))))
    for _, z in assignments(3):
        assert eval_bool(g, z) == eval_bool(f, z)


def test_negation_modes():
    p = leq(z0, "p")
    g, n_eta = eliminate_negations(Not(p), ExactEta(), n_vars=1)
    assert n_eta == 1
    # -z + exp(eta) at z = 2, eta = 0
    assert ex.evaluate(g.pred.body, [2.0, 0.0]) == pytest.approx(-1.0)
    g, n_eta = eliminate_negations(Not(p), Epsilon(1e-8))
    assert n_eta == 0
    assert ex.evaluate(g.pred.body, [0.0]) == pytest.approx(1e-8)
    g, _ = eliminate_negations(Not(p), Closure())
    assert ex.evaluate(g.pred.body, [3.0]) == -3.0


def test_negation_free_input_untouched():
    f = And((leq(z0), leq(z0 + 1.0)))
    g, n_eta = eliminate_negations(f, ExactEta())
    assert g == f and n_eta == 0


def test_negations_require_nnf():
    with pytest.raises(ValueError):
        eliminate_negations(Not(And((leq(z0), leq(z0)))))


def test_until_n2_clause_shape():
    a = boolean_leaves(3)
    b = [leq(ex.var(3 + k), f"c{k}") for k in range(3)]
    f = Until(tuple(a), tuple(b), 0)
    c = to_cnf(expand_temporal(f))
    expected = CnfProgram(
        (
            (a[0].pred, b[0].pred),
            (a[1].pred, b[0].pred, b[1].pred),
            (b[0].pred, b[1].pred, b[2].pred),
        )
    )
    assert clause_sets(c) == clause_sets(expected)
    for bits, z in assignments(6):
        av, bv = bits[:3], bits[3:]
        truth = any(bv[j] and all(av[:j]) for j in range(3))
        assert eval_bool(f, z) == truth
        assert (eval_maxmin(c, z) <= 0) == truth


@pytest.mark.parametrize("n", range(0, 7))
def test_until_clause_count(n):
    a = tuple(boolean_leaves(n + 1))
    b = tuple(leq(ex.var(n + 1 + k)) for k in range(n + 1))
    for i in range(n + 1):
        c = to_cnf(expand_temporal(Until(a, b, i)))
        assert len(c) == n - i + 1


def test_release_at_horizon_is_single_literal():
    a = tuple(boolean_leaves(3))
    b = tuple(leq(ex.var(3 + k)) for k in range(3))
    c = to_cnf(expand_temporal(Release(a, b, 2)))
    assert clause_sets(c) == {frozenset({id(b[2].pred)})}


def test_implication_becomes_clause():
    a, b = boolean_leaves(2)
    assert expand_temporal(Implies(a, b)) == Or((Not(a), b))


def test_distribution_step():
    p1, p2, p3 = boolean_leaves(3)
    c = to_cnf(Or((And((p1, p2)), p3)))
    assert clause_sets(c) == {frozenset({id(p1.pred), id(p3.pred)}), frozenset({id(p2.pred), id(p3.pred)})}


def test_cnf_input_identical():
    p1, p2, p3 = boolean_leaves(3)
    f = And((Or((p1, p2)), Or((p2, p3)), p1))
    c = to_cnf(f)
    assert [tuple(id(p) for p in cl) for cl in c.clauses] == [
        (id(p1.pred), id(p2.pred)),
        (id(p2.pred), id(p3.pred)),
        (id(p1.pred),),
    ]


def test_clause_limit():
    leaves = boolean_leaves(12)
    f = Or(tuple(And((leaves[2 * k], leaves[2 * k + 1])) for k in range(6)))
    assert len(to_cnf(f)) == 64
    with pytest.raises(ClauseExplosion):
        to_cnf(f, clause_limit=63)


def test_eval_bool_examples():
    assert eval_bool(leq(z0), [-1.0])
    a = tuple(boolean_leaves(3))
    never = tuple(leq(1.0 + 0.0 * ex.var(3)) for _ in range(3))
    for _, z in assignments(3):
        assert not eval_bool(Until(a, never, 0), np.append(z, 0.0))


def test_eval_bool_tolerance_relaxes_both_polarities():
    p = leq(z0)
    assert eval_bool(p, [1e-7], tol=1e-6)
    assert eval_bool(Not(p), [-1e-7], tol=1e-6)
    assert not eval_bool(p, [1e-7])


def test_maxmin_examples():
    vals = {"a": 3.0, "b": -1.0, "c": 2.0, "d": 5.0}
    preds = {k: Predicate(ex.const(v), name=k) for k, v in vals.items()}
    c = CnfProgram(((preds["a"], preds["b"]), (preds["c"], preds["d"])))
    assert eval_maxmin(c, []) == 2.0
    single = CnfProgram(((Predicate(ex.const(-0.5)),),))
    assert eval_maxmin(single, []) == -0.5


def test_iff_semantics():
    a, b = boolean_leaves(2)
    f = Iff(a, b)
    c, _ = compile_formula(f, Closure())
    for bits, z in assignments(2):
        assert eval_bool(f, z) == (bits[0] == bits[1])
        assert (eval_maxmin(c, z) <= 0) == (bits[0] == bits[1])


def test_predicate_count_bound():
    rng = np.random.default_rng(7)
    for _ in range(50):
        f = random_formula(rng, eq_prob=0.3)
        preds = predicates_of(f)
        n_p = sum(p.kind == "ineq" for p in preds)
        n_q = len(preds) - n_p
        try:
            c, _ = compile_formula(f, Closure(), clause_limit=2000)
        except ClauseExplosion:
            continue
        # each predicate may appear plain and negated
        assert len(c.predicates()) <= 2 * (n_p + 2 * n_q)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_pipeline_agrees_with_reference(seed, z):
    f = random_formula(np.random.default_rng(seed), eq_prob=0.2, temporal=True)
    core, _ = eliminate_negations(to_nnf(eliminate_equalities(expand_temporal(f))), Closure())
    if any(abs(p.value(z)) < 1e-9 for p in predicates_of(core)):
        return
    ref = eval_bool(f, z)
    assert eval_bool(core, z) == ref
    try:
        c = to_cnf(core, 2000)
    except ClauseExplosion:
        return
    assert (eval_maxmin(c, z) <= 0) == ref


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_exact_eta_soundness(seed, z):
    # under ExactEta a negated leaf holds iff some eta makes -p + exp(eta) <= 0
    f = random_formula(np.random.default_rng(seed), max_leaves=6)
    core = to_nnf(expand_temporal(f))
    g, n_eta = eliminate_negations(core, ExactEta(), n_vars=3)
    if any(abs(p.value(z)) < 1e-9 for p in predicates_of(core)):
        return
    margin = min(abs(p.value(z)) for p in predicates_of(core))
    point = np.concatenate([z, np.full(n_eta, np.log(margin / 2))])
    assert eval_bool(g, point) == eval_bool(f, z)


def test_sequence_validation():
    a = tuple(boolean_leaves(2))
    with pytest.raises(ValueError):
        Until(a, a[:1], 0)
    with pytest.raises(ValueError):
        Release(a, a, 2)
