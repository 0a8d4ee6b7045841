import numpy as np
import pytest

from lifelong_bbo import engine as E
from lifelong_bbo import expr
from lifelong_bbo.errors import ConfigError, ContractError
from lifelong_bbo.guide import GuideState
from lifelong_bbo.problems import TaskSpec, sample_problem

from oracles import de_best_1, max_min_distance, mean_pairwise

DE_BEST_1 = "(+ xbest (* (c 0.5 0) (- xr xr)))"
IDENTITY = "(+ x (c 0 0))"


def problem(rng, cat="U", dim=2, budget=10_000):
    return sample_problem(TaskSpec((cat,), dim=dim, fe_budget=budget), rng)


def fixed(text):
    return E.FixedRulePolicy(expr.parse(text))


def hand_population():
    X = np.array([[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]])
    return E.PopulationState(
        positions=X,
        objectives=np.array([5.0, 1.0, 3.0]),
        personal_bests=X.copy(),
        personal_best_objs=np.array([5.0, 1.0, 3.0]),
        velocities=np.zeros_like(X),
        best_so_far_pos=np.array([0.0, 0.0]),
        best_so_far_obj=0.5,
        worst_so_far_pos=X[0].copy(),
        worst_so_far_obj=5.0,
        initial_best_obj=11.0,
        initial_obj_std=2.0,
        lb=-100.0,
        ub=100.0,
        iter=3,
        stagnation_counter=2,
        improved_flag=False,
    )


def test_init_population_respects_bounds(rng):
    p = problem(rng, dim=10, budget=50_000)
    pop = E.init_population(p, 100, rng)
    assert pop.positions.shape == (100, 10)
    assert np.all(pop.positions >= -100) and np.all(pop.positions <= 100)
    assert pop.best_so_far_obj == pop.objectives.min() == pop.initial_best_obj
    assert not pop.velocities.any()
    assert pop.iter == 0 and p.evals == 100


def test_init_population_budget_and_size_errors(rng):
    with pytest.raises(ConfigError):
        E.init_population(problem(rng, budget=5), 10, rng)
    with pytest.raises(ConfigError):
        E.init_population(problem(rng), 1, rng)


def test_fla_hand_example():
    pop = hand_population()
    diam = np.sqrt(2) * 200
    expected = [
        (20 / 3) / diam,
        (10 / 3) / diam,
        5 / diam,
        2.5 / 11,
        2 / 11,
        np.sqrt(8 / 3) / 2,
        0.7,
        0.2,
        0.0,
    ]
    np.testing.assert_allclose(E.fla_state(pop, 10), expected, rtol=1e-12)


def test_fla_identical_population_and_first_iteration(rng):
    p = problem(rng)
    pop = E.init_population(p, 5, rng)
    pop.positions[:] = pop.positions[0]
    pop.best_so_far_pos = pop.positions[0].copy()
    s = E.fla_state(pop, 10)
    assert s[0] == s[1] == s[2] == 0.0
    assert s[6] == 1.0


def test_population_distance_examples(rng):
    X = rng.normal(size=(4, 2))
    assert E.population_distance(X, X) == 0.0
    assert E.population_distance([[0.0, 0.0]], [[3.0, 4.0]]) == pytest.approx(5.0)
    for _ in range(20):
        A, B = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        assert E.population_distance(A, B) == pytest.approx(max_min_distance(A, B), rel=1e-12)
    with pytest.raises(ContractError):
        E.population_distance(np.zeros((2, 2)), np.zeros((2, 3)))


def test_mean_pairwise_matches_brute_force(rng):
    from lifelong_bbo import kernels

    X = rng.normal(size=(7, 3))
    assert kernels.mean_pairwise_distance(X) == pytest.approx(mean_pairwise(X), rel=1e-12)


def _reward_case(rng, best, X, Xg):
    p = problem(rng)
    pop = E.init_population(p, 2, rng)
    pop.initial_best_obj = 10.0
    pop.best_so_far_obj = best
    pop.positions = np.asarray(X, dtype=float)
    return pop, np.asarray(Xg, dtype=float), p


def test_reward_paper_variant_examples(rng):
    pop, Xg, p = _reward_case(rng, 10.0, [[0, 0], [1, 1]], [[0, 0], [1, 1]])
    assert E.reward(pop, Xg, p, "paper") == pytest.approx(1.0)
    pop, Xg, p = _reward_case(rng, 0.0, [[0, 0], [1, 1]], [[0, 0], [1, 1]])
    assert E.reward(pop, Xg, p, "paper") == pytest.approx(0.0)
    # d = 50 over a 200-wide box
    pop, Xg, p = _reward_case(rng, 4.0, [[0, 0], [30, 40]], [[0, 0], [0, 0]])
    assert E.reward(pop, Xg, p, "paper") == pytest.approx(0.4 + 0.25)
    assert E.reward(pop, Xg, p, "descent") == pytest.approx(1 - 0.4 - 0.25)


def test_reward_degenerate_and_unknown_variant(rng):
    pop, Xg, p = _reward_case(rng, 0.0, [[0, 0], [1, 1]], [[0, 0], [1, 1]])
    pop.initial_best_obj = 0.0
    assert E.reward(pop, Xg, p, "paper") == 0.0
    with pytest.raises(ConfigError):
        E.reward(pop, Xg, p, "bogus")


def test_zero_horizon_gives_empty_trajectory(rng):
    p = problem(rng)
    t = E.run_episode(p, fixed(DE_BEST_1), None, 0, 10, rng)
    assert len(t) == 0 and t.final_best == t.initial_best


def test_identity_rule_changes_nothing(rng):
    p = problem(rng)
    seen = []
    t = E.run_episode(p, fixed(IDENTITY), None, 8, 10, rng, "paper", on_step=lambda pop: seen.append(pop.positions.copy()))
    assert all(np.array_equal(s, seen[0]) for s in seen)
    assert t.final_best == t.initial_best
    assert all(s.reward == pytest.approx(1.0) for s in t.steps)


@pytest.mark.parametrize("dim", [2, 5])
def test_de_best_1_matches_loop_oracle_step_for_step(dim):
    for seed in range(5):
        p = problem(np.random.default_rng(seed), "U", dim)
        steps = []
        E.run_episode(p, fixed(DE_BEST_1), None, 20, 10, np.random.default_rng(100 + seed),
                      on_step=lambda pop: steps.append((pop.positions.copy(), pop.best_so_far_obj)))
        ref = list(de_best_1(p, 10, 20, np.random.default_rng(100 + seed)))
        assert len(steps) == len(ref)
        for (X, fb), (Xo, fo) in zip(steps, ref):
            np.testing.assert_array_equal(X, Xo)
            assert fb == fo


def test_episode_invariants_with_guide(rng):
    p = problem(rng, "B", 3)
    H, n = 15, 8
    env, gd = E.episode_streams(3)
    bests = []

    def check(pop):
        assert np.all(pop.positions >= p.lb) and np.all(pop.positions <= p.ub)
        assert pop.stagnation_counter == 0 or not pop.improved_flag
        bests.append(pop.best_so_far_obj)

    t = E.run_episode(p, fixed(DE_BEST_1), GuideState(n, 3, gd), H, n, env, on_step=check)
    assert np.all(np.diff(bests) <= 0)
    assert t.evals == n * (H + 1)
    assert t.guide_evals == n * H
    for s in t.steps:
        assert np.all((s.state >= 0) & (s.state <= 1))
        assert np.isfinite(s.reward)


def test_frozen_rule_is_bit_reproducible(rng):
    def once():
        p = problem(np.random.default_rng(5), "C", 2)
        env, gd = E.episode_streams(11)
        return E.run_episode(p, fixed(DE_BEST_1), GuideState(10, 2, gd), 10, 10, env)

    a, b = once(), once()
    assert a.to_jsonl() == b.to_jsonl()
    assert a.final_best == b.final_best


def test_budget_too_small_is_rejected(rng):
    p = problem(rng, budget=50)
    with pytest.raises(ConfigError):
        E.run_episode(p, fixed(DE_BEST_1), None, 10, 10, rng)


def test_trajectory_jsonl_round_trip(rng):
    p = problem(rng)
    t = E.run_episode(p, fixed(DE_BEST_1), None, 4, 6, rng)
    back = E.Trajectory.from_jsonl(t.to_jsonl())
    assert len(back) == 4
    for a, b in zip(t.steps, back.steps):
        assert a.tree == b.tree
        np.testing.assert_array_equal(a.tokens, b.tokens)
        np.testing.assert_array_equal(a.state, b.state)
        assert a.reward == b.reward
        assert expr.ExprTree.from_tokens(b.tokens) == b.tree
