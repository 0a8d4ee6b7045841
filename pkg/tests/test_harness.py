import csv
import io
import json

import numpy as np
import pytest

from lifelong_bbo import expr
from lifelong_bbo import harness as Hn
from lifelong_bbo.cli import main
from lifelong_bbo.config import dump_config
from lifelong_bbo.engine import FixedRulePolicy, init_population
from lifelong_bbo.errors import ConfigError, ContractError
from lifelong_bbo.lifelong import run_lifelong
from lifelong_bbo.policy import RulePolicy, save_checkpoint
from lifelong_bbo.trainer import sample_batch_problems


def report(name, task_values, fids=(1, 2)):
    r = Hn.EvalReport(name)
    for task, rows in task_values.items():
        r.add(task, rows, fids)
    return r


def test_strictly_better_method_ranks_first():
    a = report("a", {"U": [[1.0, 1.0]], "B": [[2.0, 2.0]]})
    b = report("b", {"U": [[5.0, 5.0]], "B": [[6.0, 6.0]]})
    table = Hn.build_rank_table([a, b])
    assert table["ranks"] == [[1.0, 1.0], [2.0, 2.0]]
    assert table["average_rank"] == [1.0, 2.0]


def test_identical_results_share_average_rank():
    a = report("a", {"U": [[3.0, 4.0]]})
    b = report("b", {"U": [[3.0, 4.0]]})
    c = report("c", {"U": [[9.0, 9.0]]})
    table = Hn.build_rank_table([a, b, c])
    assert [r[0] for r in table["ranks"]] == [1.5, 1.5, 3.0]


def test_mismatched_problem_sets_are_rejected():
    a = report("a", {"U": [[1.0, 1.0]]}, fids=(1, 2))
    b = report("b", {"U": [[1.0, 1.0]]}, fids=(1, 3))
    with pytest.raises(ContractError):
        Hn.build_rank_table([a, b])
    with pytest.raises(ContractError):
        Hn.build_rank_table([a])
    with pytest.raises(ContractError):
        a.add("U", [[1.0, 1.0]], (2, 1))


def test_normalization_uses_worst_over_all_methods():
    a = report("a", {"U": [[2.0, 0.0]]})
    b = report("b", {"U": [[4.0, 0.0]]})
    reg = Hn.worst_registry([a, b])
    assert reg == {1: 4.0, 2: 0.0}
    np.testing.assert_allclose(Hn.normalized(a, reg)["U"], [[0.5, 1.0]])
    np.testing.assert_allclose(Hn.normalized(b, reg)["U"], [[0.0, 1.0]])


def test_report_dict_round_trip():
    a = report("a", {"U": [[2.0, 0.5], [1.0, 3.0]]})
    back = Hn.EvalReport.from_dict(json.loads(json.dumps(a.to_dict())))
    np.testing.assert_array_equal(back.raw["U"], a.raw["U"])


def test_identity_rule_evaluates_to_initial_best(tiny):
    t = tiny.problem.task(("B",))
    raw, fids = Hn.evaluate_policy(FixedRulePolicy(expr.parse("(+ x (c 0 0))")), t, tiny)
    problems, envs, _ = sample_batch_problems(t, tiny.eval.n_problems, Hn.eval_seed_sequence(t, tiny.eval.seed))
    init = [init_population(p, tiny.problem.pop_size, r).best_so_far_obj for p, r in zip(problems, envs)]
    np.testing.assert_array_equal(raw, init)
    assert list(fids) == [p.function_id for p in problems]


def test_evaluation_is_deterministic_and_prefix_stable(tiny):
    pol = RulePolicy(8, seed=1, head_scale=0.5)
    t = tiny.problem.task(("U",))
    a, _ = Hn.evaluate_policy(pol, t, tiny)
    b, _ = Hn.evaluate_policy(pol, t, tiny)
    np.testing.assert_array_equal(a, b)
    greedy = tiny.replace(eval={"decode": "greedy"})
    g1, _ = Hn.evaluate_policy(pol, t, greedy, n=2)
    g2, _ = Hn.evaluate_policy(pol, t, greedy, n=4)
    np.testing.assert_array_equal(g1, g2[:2])


def test_guide_evaluated_on_same_problems(tiny):
    t = tiny.problem.task(("U",))
    raw, fids = Hn.evaluate_guide(t, tiny)
    _, fp = Hn.evaluate_policy(RulePolicy(8), t, tiny)
    np.testing.assert_array_equal(fids, fp)
    assert np.all(np.isfinite(raw))


def test_evaluate_model_refuses_foreign_checkpoint(tiny, tmp_path):
    save_checkpoint(RulePolicy(8), tmp_path / "c.npz", "not-this-config")
    with pytest.raises(ConfigError):
        Hn.evaluate_model(tmp_path / "c.npz", tiny.problem.task(("U",)), tiny)


def test_frozen_checkpoint_gives_identical_curve_values(tiny, tmp_path):
    m = run_lifelong(("U", "B"), "fine_tuning", tiny.replace(train={"epochs": 1}), 0, tmp_path)
    m.checkpoints.append(m.checkpoints[-1])
    rows = Hn.forgetting_curves(m, tiny.replace(train={"epochs": 1}))
    last, repeat = rows[-4:-2], rows[-2:]
    assert [r["mean_normalized"] for r in last] == [r["mean_normalized"] for r in repeat]
    assert {r["task"] for r in rows} == {"U", "B"}


def test_single_cell_sweep_matches_repeated_runs(tiny, tmp_path):
    cfg = tiny.replace(train={"epochs": 1})
    res = Hn.sensitivity_sweep([1.0], [1.0], ("U",), 2, cfg, tmp_path)
    assert len(res["runs"]) == 2 and res["cells"][0]["runs"] == 2
    again = Hn.sensitivity_sweep([1.0], [1.0], ("U",), 2, cfg, tmp_path / "again")
    assert [r["performance"] for r in res["runs"]] == [r["performance"] for r in again["runs"]]
    with pytest.raises(ContractError):
        Hn.sensitivity_sweep([], [1.0], ("U",), 1, cfg, tmp_path)


def test_export_rules_are_parseable():
    rules = Hn.export_rules(RulePolicy(8, seed=2), np.random.default_rng(0).random((4, 9)))
    assert len(rules) == 4
    assert all(expr.validate(expr.parse(r)) for r in rules)


def test_cli_end_to_end(tiny, tmp_path, capsys):
    cfg = tiny.replace(train={"epochs": 1})
    cfg_path = tmp_path / "cfg.yaml"
    dump_config(cfg, cfg_path)
    runs = tmp_path / "runs"

    manifests = []
    for regime in ("libog", "fine_tuning"):
        assert main(["train", "--config", str(cfg_path), "--regime", regime, "--order", "UB", "--run-dir", str(runs)]) == 0
        manifests.append(capsys.readouterr().out.strip())

    ckpt = runs / "libog" / "U-B" / "seed0" / "ckpt_t1_e0001.npz"
    assert main(["evaluate", "--config", str(cfg_path), str(ckpt), "--task", "U", "-n", "2"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["raw"]) == 2

    assert main(["compare", *manifests, "--guide"]) == 0
    table = json.loads(capsys.readouterr().out)
    assert table["methods"] == ["libog", "fine_tuning", Hn.GUIDE_METHOD]

    assert main(["curves", manifests[0]]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert rows and set(rows[0]) == {"global_epoch", "trained_task", "end_of_task", "task", "mean_normalized"}

    assert main(["export-rules", str(ckpt), "-n", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3 and expr.parse(json.loads(lines[0])["rule"])

    assert main(["sweep", "--config", str(cfg_path), "--alphas", "1", "--betas", "1", "--order", "U",
                 "--repeats", "1", "--run-dir", str(tmp_path / "sw"), "--out", str(tmp_path / "sw.csv")]) == 0
    assert (tmp_path / "sw.csv").read_text().startswith("alpha,beta,mean_performance,runs")

    with pytest.raises(ConfigError):
        main(["evaluate", str(ckpt), "--task", "U", "--preset", "full"])
