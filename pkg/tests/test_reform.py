import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logicnlp import expr as ex
from logicnlp.logic import CnfProgram, Predicate, eval_maxmin
from logicnlp.reform import (
    ReformConfig,
    bigm,
    complementarity,
    detect_shared_lambda,
    lambda_point,
    recover_lambda,
    reformulate,
    smooth,
)


def const_preds(*values) -> list[Predicate]:
    return [Predicate(ex.const(v), name=f"c{k}") for k, v in enumerate(values)]


def var_preds(n: int, offset: int = 0) -> list[Predicate]:
    return [Predicate(ex.var(offset + k), name=f"v{k}") for k in range(n)]


def simplex_grid(k: int, steps: int = 20):
    for combo in itertools.product(range(steps + 1), repeat=k - 1):
        if sum(combo) <= steps:
            yield np.array([*combo, steps - sum(combo)], float) / steps


def test_two_literal_clause():
    p1, p2 = var_preds(2)
    cons, blocks = smooth(CnfProgram(((p1, p2),)), offset=2)
    assert len(cons) == 1 and len(blocks) == 1 and blocks[0].indices == (2, 3)
    # lam1 * z1 + lam2 * z2 at z = (1, -3), lam = (0.25, 0.75)
    assert ex.evaluate(cons[0].expression(), [1.0, -3.0, 0.25, 0.75]) == pytest.approx(-2.0)


def test_single_literal_clause_has_no_weights():
    (p,) = var_preds(1)
    cons, blocks = smooth(CnfProgram(((p,),)), offset=1)
    assert blocks == [] and cons[0].block is None
    assert cons[0].expression() is p.body


def test_shared_block_for_common_literals():
    g2, g3, *reds = var_preds(7)
    c = CnfProgram(tuple((g2, g3, r) for r in reds))
    groups = detect_shared_lambda(c)
    assert len(groups) == 1 and groups[0].members == (0, 1, 2, 3, 4)
    cons, blocks = smooth(c, share=True, offset=7)
    assert len(blocks) == 1 and blocks[0].size == 3 and len(cons) == 5
    assert {s.block for s in cons} == {blocks[0]}


def test_grouping_examples():
    g2, g3, r5, r6, r7 = var_preds(5)
    c = CnfProgram(((g2, g3, r5), (g2, g3, r6), (g2, g3, r7)))
    assert [g.members for g in detect_shared_lambda(c)] == [(0, 1, 2)]
    a, b, cc, d = var_preds(4)
    c = CnfProgram(((a, b), (a, cc), (d, cc)))
    groups = detect_shared_lambda(c)
    assert [g.members for g in groups] == [(0, 1), (2,)]
    loose = CnfProgram(((a, b), (cc, d)))
    assert all(not g.is_shared for g in detect_shared_lambda(loose))


def test_shared_grouping_projection_matches_cnf():
    a, b, cc, d = var_preds(4)
    c = CnfProgram(((a, b), (a, cc), (d, cc)))
    groups = detect_shared_lambda(c)
    cons, blocks = smooth(c, share=True, offset=4)
    rng = np.random.default_rng(1)
    for _ in range(500):
        z = rng.uniform(-1, 1, 4)
        holds = eval_maxmin(c, z) <= 0
        # brute-force feasibility over a simplex grid for every block
        grids = [list(simplex_grid(bl.size)) for bl in blocks]
        found = False
        for choice in itertools.product(*grids):
            x = np.zeros(4 + sum(bl.size for bl in blocks))
            x[:4] = z
            for bl, w in zip(blocks, choice):
                x[list(bl.indices)] = w
            if all(ex.evaluate(s.expression(), x) <= 0 for s in cons):
                found = True
                break
        assert found == holds
        assert (recover_lambda(c, z, groups) is not None) == holds


def test_recover_lambda_examples():
    c = CnfProgram((tuple(const_preds(3.0, -1.0, 2.0)),))
    np.testing.assert_array_equal(recover_lambda(c, [])[0], [0, 1, 0])
    assert recover_lambda(CnfProgram((tuple(const_preds(0.5, 0.2)),)), []) is None
    tie = CnfProgram((tuple(const_preds(-1.0, -1.0)),))
    lam = recover_lambda(tie, [])[0]
    np.testing.assert_array_equal(lam, [1, 0])
    assert lam @ np.array([-1.0, -1.0]) <= 0


def test_bigm_shapes():
    a, b, cc = var_preds(3)
    out = bigm(CnfProgram(((a, b, cc),)), M=1e6, offset=3)
    assert out.n_aux == 3 and len(out.inequalities) == 3 and len(out.equalities) == 1
    x = np.array([5.0, -1.0, 7.0, 1e-5, 0.0, 1e-5])
    assert [ex.evaluate(e, x) for e in out.inequalities] == pytest.approx([-5.0, -1.0, -3.0])
    assert ex.evaluate(out.equalities[0], x) == 0.0
    (p,) = var_preds(1)
    one = bigm(CnfProgram(((p,),)), offset=1)
    # mu == 0 forced by the product row, leaving p <= 0
    assert ex.evaluate(one.equalities[0], [0.0, 0.3]) == 0.3
    with pytest.raises(ValueError):
        bigm(CnfProgram(((p,),)), M=0.0)


def test_bigm_feasibility_matches_maxmin():
    rng = np.random.default_rng(2)
    for _ in range(300):
        vals = rng.uniform(-1e3, 1e3, (2, 3))
        preds = [const_preds(*row) for row in vals]
        c = CnfProgram(tuple(tuple(r) for r in preds))
        out = bigm(c, 1e6)
        # best selector: mu = 0 on the smallest literal, p / M (clipped) elsewhere
        x = np.zeros(6)
        for i, row in enumerate(vals):
            j = int(np.argmin(row))
            for k, v in enumerate(row):
                x[3 * i + k] = 0.0 if k == j else min(max(np.nextafter(v / 1e6, 1.0), 0.0), 1.0)
        ok = all(ex.evaluate(e, x) <= 0 for e in out.inequalities) and all(
            ex.evaluate(e, x) == 0 for e in out.equalities
        )
        assert ok == (eval_maxmin(c, []) <= 0)


def test_complementarity_examples():
    (p,) = var_preds(1)
    out = complementarity(CnfProgram(((p,),)), offset=1)
    # b(b - 1) == 0 and 1 - b <= 0 leave b = 1, then p - 0 * M <= 0
    assert ex.evaluate(out.equalities[0], [0.0, 1.0]) == 0.0
    assert ex.evaluate(out.inequalities[1], [0.0, 1.0]) == 0.0
    assert ex.evaluate(out.inequalities[0], [0.5, 1.0]) == 0.5
    c = CnfProgram((tuple(const_preds(-1.0, 5.0)),))
    two = complementarity(c)
    x = np.array([1.0, 0.0])
    assert all(ex.evaluate(e, x) == 0 for e in two.equalities)
    assert all(ex.evaluate(e, x) <= 0 for e in two.inequalities)


def test_complementarity_projection_matches_maxmin():
    rng = np.random.default_rng(4)
    for _ in range(200):
        vals = rng.uniform(-10, 10, (2, 2))
        c = CnfProgram(tuple(tuple(const_preds(*row)) for row in vals))
        out = complementarity(c)
        feasible = False
        for bits in itertools.product((0.0, 1.0), repeat=4):
            x = np.array(bits)
            if all(ex.evaluate(e, x) <= 0 for e in out.inequalities):
                feasible = True
                break
        assert feasible == (eval_maxmin(c, []) <= 0)


def test_reformulate_dispatch():
    a, b = var_preds(2)
    c = CnfProgram(((a, b),))
    assert reformulate(c, ReformConfig("smoothed"), 2).method == "smoothed"
    assert reformulate(c, ReformConfig("bigm"), 2).n_aux == 2
    assert reformulate(c, ReformConfig("compl"), 2).n_aux == 2
    with pytest.raises(ValueError):
        ReformConfig("nope")


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.lists(st.floats(-5, 5), min_size=1, max_size=3), min_size=1, max_size=4),
    st.booleans(),
)
def test_witness_iff_maxmin(rows, share):
    preds = [const_preds(*r) for r in rows]
    c = CnfProgram(tuple(tuple(r) for r in preds))
    groups = detect_shared_lambda(c) if share else None
    w = recover_lambda(c, [], groups)
    holds = eval_maxmin(c, []) <= 0
    assert (w is not None) == holds
    if w is not None:
        cons, blocks = smooth(c, share)
        x = lambda_point(blocks, w, sum(b.size for b in blocks))
        assert all(ex.evaluate(s.expression(), x) <= 0 for s in cons)
    else:
        # no simplex point satisfies the violated clause
        cons, blocks = smooth(c, False)
        for s in cons:
            if s.block is None or s.block.size > 3:
                continue
            vals = np.array([p.value([]) for _, p in s.terms])
            if vals.min() > 0:
                assert all(lam @ vals > 0 for lam in simplex_grid(s.block.size))
