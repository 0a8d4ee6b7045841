"""Success-history adaptive DE used as the reward guide and as a baseline.

current-to-pbest/1 mutation with an external archive, binomial crossover,
greedy one-to-one selection, and SHADE-style memories for F and CR. Reported
as ``guide-DE`` in result tables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problems import ProblemInstance


@dataclass(frozen=True)
class GuideConfig:
    p_best: float = 0.11
    memory_size: int = 6
    archive_rate: float = 1.0
    init_f: float = 0.5
    init_cr: float = 0.5
    adaptive: bool = True
    fixed_f: float = 0.5
    fixed_cr: float = 0.9


class GuideState:
    """Adaptation memories, archive and random stream of one guide run."""

    def __init__(self, pop_size: int, dim: int, rng: np.random.Generator, config: GuideConfig = GuideConfig()):
        self.config = config
        self.rng = rng
        self.pop_size = pop_size
        self.memory_f = np.full(config.memory_size, config.init_f)
        self.memory_cr = np.full(config.memory_size, config.init_cr)
        self.memory_pos = 0
        self.archive = np.empty((0, dim))
        self.archive_cap = int(round(config.archive_rate * pop_size))
        self.last_f = None
        self.last_cr = None

    def _sample_parameters(self, n):
        cfg, rng = self.config, self.rng
        if not cfg.adaptive:
            return np.full(n, cfg.fixed_f), np.full(n, cfg.fixed_cr)
        r = rng.integers(0, cfg.memory_size, n)
        cr = np.clip(rng.normal(self.memory_cr[r], 0.1), 0.0, 1.0)
        f = self.memory_f[r] + 0.1 * rng.standard_cauchy(n)
        bad = f <= 0.0
        while bad.any():
            f[bad] = self.memory_f[r[bad]] + 0.1 * rng.standard_cauchy(int(bad.sum()))
            bad = f <= 0.0
        return np.minimum(f, 1.0), cr

    def _update_memory(self, f_ok, cr_ok, gain):
        if not self.config.adaptive or gain.size == 0:
            return
        w = gain / gain.sum()
        self.memory_f[self.memory_pos] = np.sum(w * f_ok**2) / np.sum(w * f_ok)
        self.memory_cr[self.memory_pos] = np.sum(w * cr_ok)
        self.memory_pos = (self.memory_pos + 1) % self.config.memory_size

    def _archive_add(self, rows):
        if self.archive_cap <= 0:
            return
        self.archive = np.vstack([self.archive, rows])
        excess = self.archive.shape[0] - self.archive_cap
        if excess > 0:
            keep = np.sort(self.rng.permutation(self.archive.shape[0])[excess:])
            self.archive = self.archive[keep]


def guide_generation(g: GuideState, X, objectives, p: ProblemInstance, charge: bool = False):
    """One generation from population ``X``; returns (new positions, new objectives).

    Trial evaluations go to ``p.evaluate_uncharged`` unless ``charge`` is set.
    Draw order per generation: adaptive parameters, pbest picks, r1, r2,
    crossover uniforms, forced crossover index, archive trimming.
    """
    rng = g.rng
    X = np.asarray(X, dtype=np.float64)
    fx = np.asarray(objectives, dtype=np.float64)
    n, d = X.shape
    idx = np.arange(n)

    F, CR = g._sample_parameters(n)
    g.last_f, g.last_cr = F, CR

    n_top = min(n, max(2, int(round(g.config.p_best * n))))
    top = np.argsort(fx, kind="stable")[:n_top]
    pbest = top[rng.integers(0, n_top, n)]

    if n > 1:
        r1 = rng.integers(0, n - 1, n)
        r1 += r1 >= idx
    else:
        r1 = idx.copy()
    pool = np.vstack([X, g.archive])
    m = pool.shape[0]
    if m > 2:
        r2 = rng.integers(0, m - 2, n)
        lo, hi = np.minimum(idx, r1), np.maximum(idx, r1)
        r2 += r2 >= lo
        r2 += r2 >= hi
    else:
        r2 = r1.copy()

    Fc = F[:, None]
    V = X + Fc * (X[pbest] - X) + Fc * (X[r1] - pool[r2])

    cross = rng.random((n, d)) < CR[:, None]
    jrand = rng.integers(0, d, n)
    cross[idx, jrand] = True
    U = np.where(cross, V, X)
    np.clip(U, p.lb, p.ub, out=U)

    fu = p.evaluate(U) if charge else p.evaluate_uncharged(U)
    better = fu < fx
    if better.any():
        g._archive_add(X[better])
        g._update_memory(F[better], CR[better], fx[better] - fu[better])
    Xn = np.where(better[:, None], U, X)
    fn = np.where(better, fu, fx)
    return Xn, fn


def guide_step(g: GuideState, X, objectives, p: ProblemInstance) -> np.ndarray:
    """Population X' after one guide generation (evaluations not charged)."""
    return guide_generation(g, X, objectives, p)[0]


def run_guide_episode(p: ProblemInstance, H: int, pop_size: int, rng: np.random.Generator, config: GuideConfig = GuideConfig()) -> float:
    """Standalone guide run: uniform init then H generations, all evaluations charged."""
    X = p.lb + (p.ub - p.lb) * rng.random((pop_size, p.dim))
    fx = p.evaluate(X)
    g = GuideState(pop_size, p.dim, rng, config)
    best = float(fx.min())
    for _ in range(H):
        X, fx = guide_generation(g, X, fx, p, charge=True)
        best = min(best, float(fx.min()))
    return best
