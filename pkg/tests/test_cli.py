import csv
import json

import numpy as np
import pytest

from logicnlp import expr as ex
from logicnlp.bench import bench_problem, run_bench
from logicnlp.cli import (
    ProblemFile,
    ProblemFileError,
    bundled_problem,
    formula_from_tree,
    formula_to_tree,
    main,
    problem_file_from,
)
from logicnlp.logic import And, Iff, Implies, Leaf, Not, Or, Predicate, Release, Until, eval_bool
from logicnlp.nlp import build

TRIVIAL = {
    "variables": [{"name": "z", "lower": -5, "upper": 5}],
    "objective": ["pow", ["var", "z"], 2],
}

UNSAT = {
    "variables": [{"name": "z", "lower": 0, "upper": 0}],
    "objective": ["var", "z"],
    "predicates": {
        "below": {"kind": "ineq", "body": ["add", ["var", "z"], ["const", 1.0]]},
        "above": {"kind": "ineq", "body": ["sub", ["const", 1.0], ["var", "z"]]},
    },
    "formula": ["and", ["pred", "below"], ["pred", "above"]],
}


def write(tmp_path, name, data) -> str:
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_trivial_problem_exit_zero(tmp_path, capsys):
    path = write(tmp_path, "sq.json", TRIVIAL)
    traj = tmp_path / "sq.csv"
    assert main(["solve", path, "--trajectory", str(traj)]) == 0
    rows = list(csv.DictReader(traj.open()))
    assert abs(float(rows[0]["z"])) < 1e-6


def test_unsatisfiable_logic_nonzero(tmp_path, capsys):
    path = write(tmp_path, "unsat.json", UNSAT)
    report = tmp_path / "unsat.report.json"
    code = main(["solve", path, "--runs", "3", "--trajectory", str(tmp_path / "u.csv"), "--report", str(report)])
    assert code != 0
    runs = json.loads(report.read_text())["runs"]
    assert len(runs) == 3 and not any(r["certified"] for r in runs)


def test_parse_error_location(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "variables": [\n    {"name": "z",}\n  ]\n}')
    assert main(["solve", str(p)]) == 2
    assert f"{p}:3:" in capsys.readouterr().err
    with pytest.raises(ProblemFileError, match="unknown keys"):
        ProblemFile.from_dict({**TRIVIAL, "extra": 1})
    with pytest.raises(ProblemFileError):
        ProblemFile.from_dict({**UNSAT, "formula": ["and", ["pred", "missing"]]})


def test_round_trip_file():
    for name in ("quadrotor", "twotank1", "twotank2"):
        pf = bundled_problem(name)
        assert ProblemFile.from_json(pf.to_json()) == pf


def test_formula_tree_round_trip():
    preds = [Predicate(ex.var(k), name=f"p{k}") for k in range(4)]
    a, b, c, d = (Leaf(p) for p in preds)
    f = And((Implies(a, Not(b)), Iff(c, Or((a, d))), Until((a, b), (c, d), 1), Release((d,), (a,), 0)))
    names = {id(p): p.name for p in preds}
    tree = formula_to_tree(f, names)
    back = formula_from_tree(json.loads(json.dumps(tree)), {p.name: p for p in preds})
    assert back == f
    rng = np.random.default_rng(0)
    for _ in range(50):
        z = rng.uniform(-1, 1, 4)
        assert eval_bool(back, z) == eval_bool(f, z)


def test_bundled_quadrotor_is_the_benchmark():
    pf = bundled_problem("quadrotor")
    base, formula = pf.build()
    assert problem_file_from(base, formula, pf.options) == pf
    nlp, _ = bench_problem("quadrotor")
    again = build(base, formula, pf.strictness(), pf.reform_config())
    assert again.names == nlp.names
    z = np.random.default_rng(0).uniform(nlp.init_lower, nlp.init_upper)
    for a, b in zip(again.equalities + again.inequalities, nlp.equalities + nlp.inequalities):
        assert ex.evaluate(a, z) == ex.evaluate(b, z)


def test_bundled_solve_objective_matches_bench(tmp_path):
    report = tmp_path / "q.json"
    main(["solve", "quadrotor", "--runs", "1", "--trajectory", str(tmp_path / "q.csv"), "--report", str(report)])
    rec = json.loads(report.read_text())["runs"][0]
    rep = run_bench("quadrotor", runs=1, seed=0)
    assert rec["objective"] == rep.objectives[0]


def test_trajectory_has_steps(tmp_path):
    traj = tmp_path / "q.csv"
    main(["solve", "quadrotor", "--runs", "1", "--trajectory", str(traj)])
    rows = list(csv.DictReader(traj.open()))
    assert len(rows) >= 10
    assert {"x1", "u1"} <= set(rows[0])


def test_verify_zero_trials(capsys):
    assert main(["verify", "--trials", "0"]) == 0
    out = capsys.readouterr().out
    assert "0/0" in out and "all suites passed" in out


def test_verify_small(capsys):
    assert main(["verify", "--trials", "5", "--seed", "2"]) == 0


def test_dump_cnf(capsys):
    assert main(["dump-cnf", "quadrotor"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("quadrotor: 5 clauses")
    assert len(out) == 6 and all(len(line.split()) == 3 for line in out[1:])


def test_bench_command_writes_csv(tmp_path, capsys):
    report = tmp_path / "bench.csv"
    assert main(["bench", "quadrotor", "--runs", "2", "--report", str(report)]) == 0
    lines = report.read_text().splitlines()
    assert len(lines) == 2 and lines[1].startswith("smoothed,2,")


def test_unknown_problem(capsys):
    assert main(["solve", "no-such-thing"]) == 2
