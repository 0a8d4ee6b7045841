"""Optimization episodes driven by a rule-emitting policy.

Each iteration: observe the nine landscape features, ask the policy for one
rule tree, apply it to every individual, clamp to the box, evaluate, keep
improving trials (one-to-one greedy selection), and score the step against
one guide generation started from the same population.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError
from .expr import ExprTree, evaluate_population, to_text
from .guide import GuideConfig, GuideState, guide_step
from .problems import ProblemInstance

N_FEATURES = 9
REWARD_VARIANTS = ("paper", "descent")


@dataclass
class PopulationState:
    positions: np.ndarray
    objectives: np.ndarray
    personal_bests: np.ndarray
    personal_best_objs: np.ndarray
    velocities: np.ndarray
    best_so_far_pos: np.ndarray
    best_so_far_obj: float
    worst_so_far_pos: np.ndarray
    worst_so_far_obj: float
    initial_best_obj: float
    initial_obj_std: float
    lb: float
    ub: float
    iter: int = 0
    stagnation_counter: int = 0
    improved_flag: bool = False

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


def init_population(p: ProblemInstance, pop_size: int, rng: np.random.Generator) -> PopulationState:
    if pop_size < 2:
        raise ConfigError("pop_size must be >= 2")
    if p.fe_budget - p.evals < pop_size:
        raise ConfigError(f"budget {p.fe_budget} cannot cover an initial population of {pop_size}")
    X = p.lb + (p.ub - p.lb) * rng.random((pop_size, p.dim))
    f = p.evaluate(X)
    b, w = int(np.argmin(f)), int(np.argmax(f))
    return PopulationState(
        positions=X,
        objectives=f,
        personal_bests=X.copy(),
        personal_best_objs=f.copy(),
        velocities=np.zeros_like(X),
        best_so_far_pos=X[b].copy(),
        best_so_far_obj=float(f[b]),
        worst_so_far_pos=X[w].copy(),
        worst_so_far_obj=float(f[w]),
        initial_best_obj=float(f[b]),
        initial_obj_std=float(np.std(f)),
        lb=p.lb,
        ub=p.ub,
    )


def apply_rule(pop: PopulationState, tree: ExprTree, p: ProblemInstance, rng) -> None:
    """One iteration: rule, clamp, evaluate, greedy selection, bookkeeping (in place)."""
    trial = evaluate_population(tree, pop, rng)
    np.clip(trial, pop.lb, pop.ub, out=trial)
    f_trial = p.evaluate(trial)

    better = f_trial < pop.objectives
    prev = pop.positions
    pos = np.where(better[:, None], trial, prev)
    pop.velocities = pos - prev
    pop.positions = pos
    pop.objectives = np.where(better, f_trial, pop.objectives)

    pb = pop.objectives < pop.personal_best_objs
    pop.personal_bests = np.where(pb[:, None], pop.positions, pop.personal_bests)
    pop.personal_best_objs = np.where(pb, pop.objectives, pop.personal_best_objs)

    b = int(np.argmin(f_trial))
    pop.improved_flag = bool(f_trial[b] < pop.best_so_far_obj)
    if pop.improved_flag:
        pop.best_so_far_obj = float(f_trial[b])
        pop.best_so_far_pos = trial[b].copy()
    w = int(np.argmax(f_trial))
    if f_trial[w] > pop.worst_so_far_obj:
        pop.worst_so_far_obj = float(f_trial[w])
        pop.worst_so_far_pos = trial[w].copy()
    pop.iter += 1
    pop.stagnation_counter = 0 if pop.improved_flag else pop.stagnation_counter + 1


def fla_state(pop: PopulationState, H: int, f_opt: float = 0.0) -> np.ndarray:
    """The nine landscape features, each normalized into [0, 1].

    Distances are divided by the box diameter, objective gaps by the initial
    best gap to the optimum, the objective spread by its initial value.
    """
    P, f = pop.positions, pop.objectives
    diam = np.sqrt(pop.dim) * (pop.ub - pop.lb)
    cur = int(np.argmin(f))
    scale = pop.initial_best_obj - f_opt
    out = np.empty(N_FEATURES)
    out[0] = kernels.mean_pairwise_distance(P) / diam
    out[1] = kernels.mean_distance_to(P, P[cur]) / diam
    out[2] = kernels.mean_distance_to(P, pop.best_so_far_pos) / diam
    out[3] = np.mean(f - pop.best_so_far_obj) / scale if scale > 0 else 0.0
    out[4] = np.mean(f - f[cur]) / scale if scale > 0 else 0.0
    out[5] = np.std(f) / pop.initial_obj_std if pop.initial_obj_std > 0 else 0.0
    out[6] = (H - pop.iter) / H if H > 0 else 0.0
    out[7] = pop.stagnation_counter / H if H > 0 else 0.0
    out[8] = float(pop.improved_flag)
    return np.clip(out, 0.0, 1.0)


def population_distance(X, X_guide) -> float:
    """max over x in X of min over x' in X_guide of ||x - x'||_2."""
    X = np.atleast_2d(X)
    Y = np.atleast_2d(X_guide)
    if X.size == 0 or Y.size == 0 or X.shape[1] != Y.shape[1]:
        raise ContractError("population_distance needs non-empty populations of equal dimension")
    return kernels.max_min_distance(X, Y)


def reward(pop: PopulationState, X_guide, p: ProblemInstance, variant: str = "descent") -> float:
    """Step reward from best-so-far progress and distance to the guide population.

    ``paper``: ratio + distance term. ``descent``: 1 - ratio -
    distance term, so that progress and staying near the guide both pay.
    """
    scale = pop.initial_best_obj - p.f_opt
    ratio = (pop.best_so_far_obj - p.f_opt) / scale if scale > 0 else 0.0
    dist = population_distance(pop.positions, X_guide) / (p.ub - p.lb)
    if variant == "paper":
        return float(ratio + dist)
    if variant == "descent":
        return float(1.0 - ratio - dist)
    raise ConfigError(f"unknown reward variant {variant!r}")


# ------------------------------------------------------------------ policies and records


@dataclass
class Action:
    tree: ExprTree
    tokens: np.ndarray
    log_prob: float = 0.0
    value: float = 0.0
    token_log_probs: np.ndarray | None = None


class PolicyHandle(Protocol):
    def act(self, states: np.ndarray, rngs: Sequence[np.random.Generator], greedy: bool = False) -> list[Action]: ...


class FixedRulePolicy:
    """Always emits the same rule."""

    def __init__(self, tree: ExprTree):
        self.tree = tree
        self._tokens = tree.tokens()

    def act(self, states, rngs, greedy=False):
        return [Action(self.tree, self._tokens.copy()) for _ in range(len(states))]


@dataclass
class StepRecord:
    state: np.ndarray
    tree: ExprTree
    tokens: np.ndarray
    log_prob: float
    reward: float
    value: float
    next_state: np.ndarray

    def to_json(self) -> str:
        return json.dumps(
            {
                "state": self.state.tolist(),
                "rule": to_text(self.tree),
                "tokens": self.tokens.tolist(),
                "log_prob": self.log_prob,
                "reward": self.reward,
                "value": self.value,
                "next_state": self.next_state.tolist(),
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "StepRecord":
        d = json.loads(line)
        tokens = np.asarray(d["tokens"], dtype=np.int64).reshape(-1, 3)
        return cls(
            state=np.asarray(d["state"]),
            tree=ExprTree.from_tokens(tokens),
            tokens=tokens,
            log_prob=d["log_prob"],
            reward=d["reward"],
            value=d["value"],
            next_state=np.asarray(d["next_state"]),
        )


@dataclass
class Trajectory:
    steps: list[StepRecord] = field(default_factory=list)
    initial_best: float = float("nan")
    final_best: float = float("nan")
    function_id: int = -1
    evals: int = 0
    guide_evals: int = 0

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def total_reward(self) -> float:
        return float(sum(s.reward for s in self.steps))

    def to_jsonl(self) -> str:
        return "".join(s.to_json() + "\n" for s in self.steps)

    @classmethod
    def from_jsonl(cls, text: str) -> "Trajectory":
        return cls(steps=[StepRecord.from_json(line) for line in text.splitlines() if line.strip()])


# ------------------------------------------------------------------ episode loop


def episode_streams(seed) -> tuple[np.random.Generator, np.random.Generator]:
    """(environment rng, guide rng) derived from one episode seed."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    env, gd = ss.spawn(2)
    return np.random.default_rng(env), np.random.default_rng(gd)


def run_episodes(
    problems: Sequence[ProblemInstance],
    policy: PolicyHandle,
    guides: Sequence[GuideState | None],
    H: int,
    pop_size: int,
    rngs: Sequence[np.random.Generator],
    reward_variant: str = "descent",
    greedy: bool = False,
    record: bool = True,
    on_step=None,
) -> list[Trajectory]:
    """Run several independent episodes in lockstep so the policy acts in batches.

    A ``None`` guide skips the guide generation; the distance term is then 0.
    ``on_step(b, pop)`` is called after every rule application.
    """
    if reward_variant not in REWARD_VARIANTS:
        raise ConfigError(f"unknown reward variant {reward_variant!r}")
    for p in problems:
        if p.fe_budget - p.evals < pop_size * (H + 1):
            raise ConfigError(f"budget {p.fe_budget} < pop_size * (H + 1) = {pop_size * (H + 1)}")
    pops = [init_population(p, pop_size, rng) for p, rng in zip(problems, rngs)]
    trajs = [Trajectory(initial_best=pop.best_so_far_obj, function_id=p.function_id) for pop, p in zip(pops, problems)]
    states = np.stack([fla_state(pop, H, p.f_opt) for pop, p in zip(pops, problems)]) if pops else None

    for _ in range(H):
        actions = policy.act(states, rngs, greedy)
        next_states = np.empty_like(states)
        for b, (p, pop, g, rng, act) in enumerate(zip(problems, pops, guides, rngs, actions)):
            X_prev = pop.positions
            X_guide = guide_step(g, X_prev, pop.objectives, p) if g is not None else None
            before = pop.best_so_far_obj
            apply_rule(pop, act.tree, p, rng)
            assert pop.best_so_far_obj <= before
            r = reward(pop, X_guide if X_guide is not None else pop.positions, p, reward_variant)
            next_states[b] = fla_state(pop, H, p.f_opt)
            if on_step is not None:
                on_step(b, pop)
            if record:
                trajs[b].steps.append(
                    StepRecord(states[b], act.tree, act.tokens, act.log_prob, r, act.value, next_states[b])
                )
        states = next_states

    for t, pop, p in zip(trajs, pops, problems):
        t.final_best = pop.best_so_far_obj
        t.evals = p.evals
        t.guide_evals = p.guide_evals
    return trajs


def run_episode(
    p: ProblemInstance,
    policy: PolicyHandle,
    guide: GuideState | None,
    H: int,
    pop_size: int,
    rng: np.random.Generator,
    reward_variant: str = "descent",
    greedy: bool = False,
    on_step=None,
) -> Trajectory:
    hook = None if on_step is None else (lambda b, pop: on_step(pop))
    return run_episodes([p], policy, [guide], H, pop_size, [rng], reward_variant, greedy, on_step=hook)[0]


def make_guides(problems, pop_size, guide_rngs, config: GuideConfig = GuideConfig()):
    return [GuideState(pop_size, p.dim, g, config) for p, g in zip(problems, guide_rngs)]
