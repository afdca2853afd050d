import numpy as np
import pytest

from logicnlp import checks, logic
from logicnlp.checks import SUITES, random_formula, run_suites


def test_suites_pass():
    for r in run_suites(30, seed=5):
        assert r.ok, (r.name, r.failures)
        assert r.total == 30


def test_zero_trials_vacuous():
    assert all(r.ok and r.total == 0 for r in run_suites(0))
    with pytest.raises(ValueError):
        run_suites(-1)


def test_random_formula_is_seeded():
    a = random_formula(np.random.default_rng(9))
    b = random_formula(np.random.default_rng(9))
    z = np.array([0.3, -0.2, 1.1])
    assert logic.eval_bool(a, z) == logic.eval_bool(b, z)
    assert repr(a) == repr(b)


def test_dropped_de_morgan_flip_is_caught(monkeypatch):
    def broken(f):
        # push negations through And/Or without swapping the connective
        def go(g, neg):
            if isinstance(g, logic.Not):
                return go(g.arg, not neg)
            if isinstance(g, (logic.And, logic.Or)):
                return type(g)(tuple(go(a, neg) for a in g.args))
            return logic.Not(g) if neg else g

        return go(f, False)

    monkeypatch.setattr(checks, "to_nnf", broken)
    assert not SUITES["passes"](40, 0).ok
