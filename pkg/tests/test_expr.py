import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logicnlp import expr as ex
from logicnlp.expr import CompiledBatch, DomainError, Expr


def central_diff(e: Expr, z: np.ndarray, h: float = 1e-6) -> np.ndarray:
    out = np.empty(len(z))
    for j in range(len(z)):
        up, dn = z.copy(), z.copy()
        up[j] += h
        dn[j] -= h
        out[j] = (ex.evaluate(e, up) - ex.evaluate(e, dn)) / (2 * h)
    return out


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


x0, x1, x2 = ex.var(0), ex.var(1), ex.var(2)


def test_values():
    assert ex.evaluate(ex.sin(x0), [0.0]) == 0.0
    assert ex.evaluate(x0 + 2 * x1, [1.0, 2.0]) == 5.0


def test_hover_balance_term():
    # vertical acceleration cos(angle) * (u1 + u2) / mass - g at the hover thrust
    e = ex.cos(x0) * (x1 + x2) / 0.15 - 9.81
    assert abs(ex.evaluate(e, [0.0, 0.73575, 0.73575])) < 1e-12


def test_gradients_trivial():
    assert ex.gradient(x0**2, [3.0])[0] == 6.0
    np.testing.assert_array_equal(ex.gradient(ex.const(4.0), [1.0, 2.0]), [0.0, 0.0])


def test_weighted_literal_gradient_matches_fd():
    # lam1 * p1(z) + lam2 * p2(z) over (z1, z2, lam1, lam2)
    p1 = (x0 - 1.0) ** 2 + x1**2 - 1.0
    p2 = ex.sin(x0) * x1 - 0.3
    e = ex.var(2) * p1 + ex.var(3) * p2
    rng = np.random.default_rng(3)
    for _ in range(100):
        z = np.concatenate([rng.uniform(-2, 2, 2), rng.uniform(0, 1, 2)])
        assert rel_err(ex.gradient(e, z), central_diff(e, z)) <= 1e-6


PRIMITIVES = {
    "add": (lambda a, b: a + b, (-5, 5)),
    "sub": (lambda a, b: a - b, (-5, 5)),
    "mul": (lambda a, b: a * b, (-5, 5)),
    "div": (lambda a, b: a / (b * b + 1.0), (-5, 5)),
    "neg": (lambda a, b: -a, (-5, 5)),
    "pow": (lambda a, b: a**3, (-3, 3)),
    "powfrac": (lambda a, b: (a * a + 1.0) ** 1.5, (-3, 3)),
    "sin": (lambda a, b: ex.sin(a), (-5, 5)),
    "cos": (lambda a, b: ex.cos(a), (-5, 5)),
    "exp": (lambda a, b: ex.exp(a), (-5, 3)),
    "sqrt": (lambda a, b: ex.sqrt(a), (0.05, 10)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_fd(name):
    build, (lo, hi) = PRIMITIVES[name]
    e = build(x0, x1)
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    for _ in range(1000):
        z = rng.uniform(lo, hi, 2)
        assert rel_err(ex.gradient(e, z), central_diff(e, z)) <= 1e-5


def test_evaluate_is_pure():
    e = ex.exp(ex.sin(x0) * x1) / (1.0 + x0**2)
    z = [0.3, -1.7]
    assert ex.evaluate(e, z) == ex.evaluate(e, z)


def test_domain_errors():
    with pytest.raises(DomainError):
        ex.evaluate(ex.sqrt(x0), [-1.0])
    with pytest.raises(DomainError):
        ex.evaluate(x0 / x1, [1.0, 0.0])
    with pytest.raises(DomainError):
        ex.evaluate(x0**0.5, [-2.0])


def test_construction_rules():
    with pytest.raises(TypeError):
        x0**x1
    with pytest.raises(ValueError):
        Expr("abs", (x0,))
    with pytest.raises(ValueError):
        ex.var(-1)


def test_tree_round_trip():
    e = ex.sqrt(x0 * x0 + 1.0) - ex.cos(x1) ** 2 / ex.exp(-x0)
    names = ["a", "b"]
    back = ex.from_tree(ex.to_tree(e, names), {"a": 0, "b": 1})
    for z in ([0.1, 0.2], [-1.3, 2.0]):
        assert ex.evaluate(back, z) == ex.evaluate(e, z)


def test_symbolic_derivatives_agree_with_reverse_mode():
    e = ex.sin(x0 * x1) + x2**3 / (x0 * x0 + 2.0)
    ds = ex.derivatives(e)
    z = np.array([0.4, -0.9, 1.3])
    g = ex.gradient(e, z)
    for k in range(3):
        assert ex.evaluate(ds[k], z) == pytest.approx(g[k], rel=1e-14, abs=1e-14)
    lin = ex.derivatives(3.0 * x0 + 1.0)
    assert set(lin) == {0} and lin[0].op == "const" and lin[0].value == 3.0


def test_compiled_batch_matches_reference():
    exprs = [x0 * x1 - 1.0, ex.sqrt(x2 * x2 + 1.0), ex.const(2.0)]
    batch = CompiledBatch(exprs, 3)
    z = np.array([1.5, -0.5, 0.7])
    np.testing.assert_allclose(batch.values(z), [ex.evaluate(e, z) for e in exprs])
    dense = batch.dense_jacobian(z)
    for i, e in enumerate(exprs):
        np.testing.assert_allclose(dense[i], ex.gradient(e, z), rtol=1e-14, atol=1e-14)


finite = st.floats(-3.0, 3.0, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3), st.integers(0, 2**31))
def test_random_expression_gradients(z, seed):
    from logicnlp.checks import _random_smooth_expr

    e = _random_smooth_expr(np.random.default_rng(seed))
    z = np.asarray(z)
    fd = central_diff(e, z)
    assert rel_err(ex.gradient(e, z), fd) <= 1e-5
    assert math.isfinite(ex.evaluate(e, z))
