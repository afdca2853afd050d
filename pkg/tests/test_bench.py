import numpy as np
import pytest

from logicnlp import expr as ex
from logicnlp.bench import (
    QuadrotorSpec,
    TwoTankSpec,
    bench_problem,
    build_quadrotor,
    build_two_tank,
    compare_methods,
    report_csv,
    run_bench,
    simulate_quadrotor,
    simulate_two_tank,
)
from logicnlp.logic import compile_formula, eval_bool, expand_temporal, to_cnf, to_nnf, Until
from logicnlp.nlp import multistart
from logicnlp.reform import detect_shared_lambda


def test_quadrotor_constants():
    q = QuadrotorSpec()
    assert (q.N, q.Ts, q.mass, q.inertia, q.arm, q.gravity) == (10, 0.25, 0.15, 0.00125, 0.1, 9.81)
    assert q.u_max == 2.0 and q.target_r == 0.0 and q.target_s == 15.0
    assert q.green_center == (2.0, 1.0) and q.green_radius == 1.0 and tuple(q.green_steps) == (2, 3)
    assert q.red_center == (0.0, 8.0) and q.red_radius == 5.0 and tuple(q.red_steps) == (5, 6, 7, 8, 9)


def test_quadrotor_hover_rows():
    base, _ = build_quadrotor()
    q = QuadrotorSpec()
    z = np.zeros(base.n)
    for k in range(1, q.N + 1):
        z[q.u_index(k, 1)] = z[q.u_index(k, 2)] = 0.15 * 9.81 / 2
    for k in range(q.N):
        for j in (2, 4, 6):
            assert abs(ex.evaluate(base.equalities[6 * k + j - 1], z)) < 1e-12


def test_quadrotor_sizes_and_cnf():
    base, f = build_quadrotor()
    assert base.n == 6 * 10 + 2 * 10
    c, n_eta = compile_formula(f)
    assert n_eta == 0 and len(c) == 5 and all(len(cl) == 3 for cl in c.clauses)
    groups = detect_shared_lambda(c)
    assert len(groups) == 1 and groups[0].members == (0, 1, 2, 3, 4)
    nlp, _ = bench_problem("quadrotor")
    assert nlp.n == 83 and len(nlp.inequalities) == 5


def test_quadrotor_simulation_satisfies_dynamics():
    base, _ = build_quadrotor()
    rng = np.random.default_rng(0)
    z = simulate_quadrotor(rng.uniform(0, 2, (10, 2)))
    res = [abs(ex.evaluate(e, z)) for e in base.equalities[:-2]]
    assert max(res) < 1e-12


def test_two_tank_constants():
    t = TwoTankSpec()
    assert (t.N, t.Ts, t.A1, t.A2, t.s1, t.s12, t.s2, t.hs12, t.hs2) == (20, 3.0, 2.0, 1.0, 0.015, 0.02, 0.02, 2.0, 3.0)
    assert t.u_max == 0.5
    assert (t.h0, t.hN) == ((5.0, 5.0), (1.5, 3.5))
    t2 = TwoTankSpec(case=2)
    assert (t2.h0, t2.hN, t2.until_threshold) == ((5.0, 2.0), (2.0, 4.0), 4.5)
    with pytest.raises(ValueError):
        TwoTankSpec(case=3)
    with pytest.raises(ValueError):
        build_two_tank(0)


def test_outlet_height_case_split():
    base, f = build_two_tank(1)
    t = TwoTankSpec()
    split = f.args[2]  # tank 1 at step 1
    z = np.zeros(base.n)
    z[t.h_index(1, 1)] = 1.5
    assert eval_bool(split, z)
    z[t.hbar_index(1, 1)] = 0.2
    assert not eval_bool(split, z)
    z[t.h_index(1, 1)] = 5.0
    z[t.hbar_index(1, 1)] = 3.0
    assert eval_bool(split, z)
    z[t.hbar_index(1, 1)] = 2.9
    assert not eval_bool(split, z)


def test_two_tank_simulation_is_consistent():
    for case in (1, 2):
        base, f = build_two_tank(case)
        z = simulate_two_tank(np.full(20, 0.1), TwoTankSpec(case=case))
        assert max(abs(ex.evaluate(e, z)) for e in base.equalities[:-2]) < 1e-12
        assert all(eval_bool(part, z) for part in f.args[:40])


def test_case_two_until_clause_count():
    _, f = build_two_tank(2)
    until = f.args[-1]
    assert isinstance(until, Until) and until.start == 0 and until.horizon == 20
    assert len(to_cnf(to_nnf(expand_temporal(until)))) == 21


def test_warm_start_single_run_is_optimal():
    nlp, f = bench_problem("quadrotor")
    outs = multistart(nlp, 6, seed=0)
    best = min((o for o in outs if o.feasible), key=lambda o: o.objective)
    rep = run_bench("quadrotor", runs=1, seed=11, starts=[best.x])
    assert rep.opt == 1 and rep.runs == 1 and rep.seed == 11
    assert rep.opt + rep.subopt + rep.inf == rep.runs
    assert rep.best_cost == pytest.approx(best.objective, rel=1e-2)


def test_reports_deterministic_and_counts_sum():
    a = run_bench("quadrotor", runs=5, seed=3)
    b = run_bench("quadrotor", runs=5, seed=3)
    assert a.deterministic_view() == b.deterministic_view()
    assert a.opt + a.subopt + a.inf == 5
    text = report_csv([a])
    assert text.splitlines()[0].startswith("method,runs,opt")


def test_feasible_runs_are_certified():
    rep = run_bench("quadrotor", runs=5, seed=0)
    for o, cls in zip(rep.outcomes, rep.classes):
        if cls != "Infeasible":
            assert o.violation <= 1e-6
            assert eval_bool(rep.formula, o.x, 1e-6)


def test_compare_methods_uses_one_reference():
    reps = compare_methods("quadrotor", ("smoothed", "bigm"), runs=3, seed=0)
    refs = {r.config["reference_cost"] for r in reps}
    assert len(refs) == 1 and refs.pop() == min(r.best_cost for r in reps)
    assert "baseline, reconstructed" in run_bench("quadrotor", "compl", runs=1).table()
