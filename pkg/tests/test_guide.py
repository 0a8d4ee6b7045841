import numpy as np
import pytest

from lifelong_bbo import guide as G
from lifelong_bbo.problems import TaskSpec, sample_problem


def problem(rng, dim=3, budget=10_000, cat="B"):
    return sample_problem(TaskSpec((cat,), dim=dim, fe_budget=budget), rng)


def loop_generation(X, f, p, rng, F, CR, p_best, archive):
    """current-to-pbest/1 with archive, one individual at a time, same draw order."""
    n, d = X.shape
    n_top = min(n, max(2, int(round(p_best * n))))
    top = np.argsort(f, kind="stable")[:n_top]
    pb = top[rng.integers(0, n_top, n)]
    r1 = rng.integers(0, n - 1, n)
    pool = np.vstack([X, archive])
    r2 = rng.integers(0, pool.shape[0] - 2, n)
    cross = rng.random((n, d))
    jr = rng.integers(0, d, n)
    U = np.empty_like(X)
    for i in range(n):
        a = r1[i] + (r1[i] >= i)
        lo, hi = min(i, a), max(i, a)
        b = r2[i] + (r2[i] >= lo)
        b = b + (b >= hi)
        for j in range(d):
            if cross[i, j] < CR or j == jr[i]:
                v = X[i, j] + F * (X[pb[i], j] - X[i, j]) + F * (X[a, j] - pool[b, j])
                U[i, j] = min(max(v, p.lb), p.ub)
            else:
                U[i, j] = X[i, j]
    fu = p.value(U)
    better = fu < f
    return np.where(better[:, None], U, X), np.where(better, fu, f)


def test_fixed_parameter_generation_matches_loop_oracle(rng):
    p = problem(rng)
    X = rng.uniform(-100, 100, (12, 3))
    f = p.value(X)
    cfg = G.GuideConfig(adaptive=False, fixed_f=0.5, fixed_cr=0.9, archive_rate=0.0)
    g = G.GuideState(12, 3, np.random.default_rng(7), cfg)
    Xn, fn = G.guide_generation(g, X, f, p)
    Xo, fo = loop_generation(X, f, p, np.random.default_rng(7), 0.5, 0.9, cfg.p_best, np.empty((0, 3)))
    np.testing.assert_allclose(Xn, Xo, rtol=0, atol=1e-12)
    np.testing.assert_allclose(fn, fo, rtol=0, atol=1e-9)


def test_adaptive_parameters_stay_in_range(rng):
    g = G.GuideState(50, 2, rng)
    for _ in range(20):
        F, CR = g._sample_parameters(50)
        assert np.all(F > 0) and np.all(F <= 1)
        assert np.all(CR >= 0) and np.all(CR <= 1)


def test_memory_update_is_weighted_lehmer_mean(rng):
    g = G.GuideState(4, 2, rng)
    F = np.array([0.2, 0.6])
    CR = np.array([0.1, 0.9])
    gain = np.array([1.0, 3.0])
    g._update_memory(F, CR, gain)
    w = gain / gain.sum()
    assert g.memory_f[0] == pytest.approx((w @ F**2) / (w @ F))
    assert g.memory_cr[0] == pytest.approx(w @ CR)
    assert g.memory_pos == 1


def test_archive_is_capped(rng):
    p = problem(rng, dim=2)
    g = G.GuideState(8, 2, np.random.default_rng(3))
    X = rng.uniform(-100, 100, (8, 2))
    f = p.value(X)
    for _ in range(30):
        X, f = G.guide_generation(g, X, f, p)
        assert g.archive.shape[0] <= g.archive_cap == 8


def test_generation_is_monotone_and_uncharged(rng):
    p = problem(rng, dim=4, budget=1)
    g = G.GuideState(10, 4, np.random.default_rng(0))
    X = rng.uniform(-100, 100, (10, 4))
    f = p.value(X)
    for _ in range(10):
        Xn = G.guide_step(g, X, f, p)
        fn = p.value(Xn)
        assert np.all(fn <= f)
        assert np.all((Xn >= p.lb) & (Xn <= p.ub))
        X, f = Xn, fn
    assert p.evals == 0 and p.guide_evals == 100


def test_standalone_guide_improves_and_charges(rng):
    p = problem(rng, dim=2, budget=10 * 31, cat="U")
    X0 = p.lb + (p.ub - p.lb) * np.random.default_rng(4).random((10, 2))
    best = G.run_guide_episode(p, 30, 10, np.random.default_rng(4))
    assert p.evals == 310
    assert best <= p.value(X0).min()
