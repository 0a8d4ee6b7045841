"""PPO on one task, plus the two consolidation terms.

Per epoch the loss is ``L_PPO + alpha * CL_inter + beta * CL_intra``:
``CL_inter`` is a diagonal-Fisher EWC penalty toward earlier tasks' parameter
snapshots, ``CL_intra`` is KL(pi_theta || pi_elite) toward the best policy seen
so far on the current task.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch.func import functional_call, grad, vmap

from .config import Config
from .engine import Trajectory, episode_streams, make_guides, run_episodes
from .errors import ContractError, TrainingDivergence
from .policy import RulePolicy, SequenceBatch, batch_kl, make_batch, sequence_entropy, sequence_log_prob
from .problems import TaskSpec, sample_problem

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ collection


def batch_seed(seed: int, task_index: int, epoch: int) -> np.random.SeedSequence:
    """Seed of one training batch; independent of the regime so runs stay comparable."""
    return np.random.SeedSequence([seed, task_index, epoch])


def sample_batch_problems(task: TaskSpec, M: int, ss: np.random.SeedSequence, stratified: bool = False):
    """M problems plus (env rng, guide rng) per episode, all derived from ``ss``."""
    children = ss.spawn(M)
    ids = task.function_ids
    problems, env_rngs, guide_rngs = [], [], []
    for i, child in enumerate(children):
        prob_ss, ep_ss = child.spawn(2)
        fid = ids[i % len(ids)] if stratified else None
        problems.append(sample_problem(task, np.random.default_rng(prob_ss), fid))
        env, gd = episode_streams(ep_ss)
        env_rngs.append(env)
        guide_rngs.append(gd)
    return problems, env_rngs, guide_rngs


def performance(trajs: Sequence[Trajectory], stat: str = "reward_sum") -> float:
    """Elite-comparison statistic; larger is better for both choices."""
    if not trajs:
        raise ContractError("no trajectories")
    if stat == "reward_sum":
        return float(np.mean([t.total_reward for t in trajs]))
    if stat == "final_objective":
        return -float(np.mean([t.final_best for t in trajs]))
    raise ContractError(f"unknown statistic {stat!r}")


def collect_batch(policy, task: TaskSpec, M: int, cfg: Config, seed=0, stratified: bool = False):
    """M sampled-mode episodes on fresh problems; returns (trajectories, mean performance)."""
    if M < 1:
        raise ContractError("M must be >= 1")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    problems, env_rngs, guide_rngs = sample_batch_problems(task, M, ss, stratified)
    guides = make_guides(problems, cfg.problem.pop_size, guide_rngs, cfg.guide)
    trajs = run_episodes(
        problems,
        policy,
        guides,
        cfg.problem.horizon,
        cfg.problem.pop_size,
        env_rngs,
        cfg.train.reward_variant,
    )
    return trajs, performance(trajs, cfg.train.elite_stat)


# ------------------------------------------------------------------ PPO


def gae(rewards, values, gamma: float, lam: float):
    """(advantages, returns) for one finished episode; the value after the last step is 0."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    adv = np.zeros_like(rewards)
    running = 0.0
    for k in range(len(rewards) - 1, -1, -1):
        nxt = values[k + 1] if k + 1 < len(rewards) else 0.0
        delta = rewards[k] + gamma * nxt - values[k]
        running = delta + gamma * lam * running
        adv[k] = running
    return adv, adv + values


@dataclass
class PPOBatch:
    seqs: SequenceBatch
    old_log_probs: torch.Tensor
    advantages: torch.Tensor
    returns: torch.Tensor
    traj_index: np.ndarray
    n_trajectories: int
    total_steps: int = 0

    def __post_init__(self):
        self.total_steps = self.total_steps or self.seqs.size

    @property
    def size(self) -> int:
        return self.seqs.size

    def subset(self, idx) -> "PPOBatch":
        """Minibatch view; ``total_steps`` keeps the full-batch size for rescaling."""
        idx = torch.as_tensor(idx)
        s = self.seqs
        L = int(s.valid[idx].sum(1).max())
        seqs = SequenceBatch(s.states[idx], s.tokens[idx, :L], s.valid[idx, :L], s.masks[idx, :L], s.is_const[idx, :L])
        return PPOBatch(
            seqs,
            self.old_log_probs[idx],
            self.advantages[idx],
            self.returns[idx],
            self.traj_index[idx.numpy()],
            self.n_trajectories,
            self.total_steps,
        )


def build_ppo_batch(trajs: Sequence[Trajectory], gamma: float = 0.99, lam: float = 0.95, normalize: bool = True) -> PPOBatch:
    steps = [s for t in trajs for s in t.steps]
    if not steps:
        raise ContractError("empty batch")
    advs, rets, idx = [], [], []
    for j, t in enumerate(trajs):
        a, r = gae([s.reward for s in t.steps], [s.value for s in t.steps], gamma, lam)
        advs.append(a)
        rets.append(r)
        idx.extend([j] * len(t))
    adv = np.concatenate(advs)
    if normalize and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return PPOBatch(
        seqs=make_batch([s.state for s in steps], [s.tokens for s in steps]),
        old_log_probs=torch.tensor([s.log_prob for s in steps], dtype=torch.float64),
        advantages=torch.from_numpy(adv),
        returns=torch.from_numpy(np.concatenate(rets)),
        traj_index=np.asarray(idx),
        n_trajectories=len(trajs),
    )


def clipped_surrogate(ratio, advantage, clip_eps: float):
    """min(r A, clip(r, 1-eps, 1+eps) A), elementwise."""
    ratio = torch.as_tensor(ratio, dtype=torch.float64)
    advantage = torch.as_tensor(advantage, dtype=torch.float64)
    return torch.minimum(ratio * advantage, torch.clamp(ratio, 1 - clip_eps, 1 + clip_eps) * advantage)


def ppo_loss(policy: RulePolicy, batch: PPOBatch, clip_eps=0.2, value_coef=0.5, entropy_coef=0.01, scores=None):
    """Clipped actor loss + value_coef * MSE - entropy_coef * entropy."""
    scores = policy.score(batch.seqs) if scores is None else scores
    logp = sequence_log_prob(scores, batch.seqs)
    ratio = torch.exp(logp - batch.old_log_probs)
    actor = -clipped_surrogate(ratio, batch.advantages, clip_eps).mean()
    critic = ((scores.value - batch.returns) ** 2).mean()
    entropy = sequence_entropy(scores, batch.seqs).mean()
    return actor + value_coef * critic - entropy_coef * entropy


# ------------------------------------------------------------------ consolidation


@dataclass(frozen=True)
class TaskMemory:
    task_index: int
    theta_star: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        if self.theta_star.shape != self.omega.shape:
            raise ContractError("theta_star and omega must have equal length")
        if np.any(self.omega < 0):
            raise ContractError("importance must be non-negative")

    def save(self, path) -> None:
        np.savez(path, task_index=self.task_index, theta_star=self.theta_star, omega=self.omega)

    @classmethod
    def load(cls, path) -> "TaskMemory":
        with np.load(path) as d:
            return cls(int(d["task_index"]), d["theta_star"].copy(), d["omega"].copy())


def importance_from_grads(grads, traj_index) -> np.ndarray:
    """(1/|J|) sum_tau (1/|tau|) sum_k g_k**2 from per-step gradient rows."""
    grads = np.atleast_2d(np.asarray(grads, dtype=np.float64))
    traj_index = np.asarray(traj_index)
    if grads.shape[0] == 0 or grads.shape[0] != traj_index.shape[0]:
        raise ContractError("need one trajectory label per gradient row")
    labels, counts = np.unique(traj_index, return_inverse=True, return_counts=True)[1:]
    w = 1.0 / (counts[labels] * len(counts))
    return (w[:, None] * grads**2).sum(axis=0)


def per_step_log_prob_grads(policy: RulePolicy, seqs: SequenceBatch) -> np.ndarray:
    """Row k = d log pi(a_k | s_k) / d theta, in registry order."""
    params = {n: p.detach() for n, p in policy.named_parameters()}

    def one(params, st, tok, valid, masks, const):
        b = SequenceBatch(st[None], tok[None], valid[None], masks[None], const[None])
        return sequence_log_prob(functional_call(policy, params, (b,)), b)[0]

    g = vmap(grad(one), in_dims=(None, 0, 0, 0, 0, 0))(
        params, seqs.states, seqs.tokens, seqs.valid, seqs.masks, seqs.is_const
    )
    return torch.cat([g[n].reshape(seqs.size, -1) for n in policy.PARAM_ORDER], dim=1).numpy()


def ewc_importance(policy: RulePolicy, trajs: Sequence[Trajectory]) -> np.ndarray:
    steps = [s for t in trajs for s in t.steps]
    if not steps:
        raise ContractError("empty trajectory set")
    seqs = make_batch([s.state for s in steps], [s.tokens for s in steps])
    idx = np.concatenate([np.full(len(t), j) for j, t in enumerate(trajs) if len(t)])
    return importance_from_grads(per_step_log_prob_grads(policy, seqs), idx)


def ewc_penalty(theta: torch.Tensor, memories: Sequence[TaskMemory]) -> torch.Tensor:
    """(1/i) sum_j sum Omega_j (theta - theta*_j)**2; 0 without memories."""
    if not memories:
        return torch.zeros((), dtype=torch.float64)
    total = sum(
        (torch.from_numpy(m.omega) * (theta - torch.from_numpy(m.theta_star)) ** 2).sum() for m in memories
    )
    return total / len(memories)


def ebc_penalty(policy: RulePolicy, elite: RulePolicy, seqs: SequenceBatch, n_trajectories: int) -> torch.Tensor:
    return batch_kl(policy, elite, seqs) / n_trajectories


@dataclass(frozen=True)
class EliteSnapshot:
    params: np.ndarray
    score: float = float("-inf")


def maybe_update_elite(elite: EliteSnapshot, params: np.ndarray, mean_performance: float) -> EliteSnapshot:
    if mean_performance >= elite.score:
        return EliteSnapshot(np.array(params, copy=True), float(mean_performance))
    return elite


# ------------------------------------------------------------------ one task


def total_loss(policy, batch: PPOBatch, cfg: Config, memories=(), elite: RulePolicy | None = None, alpha=None, beta=None):
    """(total, components); zero-weight terms are skipped, not computed."""
    alpha = cfg.train.alpha if alpha is None else alpha
    beta = cfg.train.beta if beta is None else beta
    ppo = cfg.ppo
    l_ppo = ppo_loss(policy, batch, ppo.clip_eps, ppo.value_coef, ppo.entropy_coef)
    loss = l_ppo
    parts = {"L_PPO": l_ppo.item(), "CL_inter": 0.0, "CL_intra": 0.0}
    if alpha > 0 and memories:
        inter = ewc_penalty(policy.flat_tensor(), memories)
        loss = loss + alpha * inter
        parts["CL_inter"] = inter.item()
    if beta > 0 and elite is not None:
        # a minibatch holds size/total_steps of the states; scale its KL sum up to the full batch
        intra = ebc_penalty(policy, elite, batch.seqs, batch.n_trajectories) * (batch.total_steps / batch.size)
        loss = loss + beta * intra
        parts["CL_intra"] = intra.item()
    return loss, parts


def minibatches(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index blocks covering 0..n-1; size <= 0 means one full batch in order."""
    if size <= 0 or size >= n:
        return [np.arange(n)]
    perm = rng.permutation(n)
    return [perm[i : i + size] for i in range(0, n, size)]


def make_optimizer(policy: RulePolicy, cfg: Config):
    if cfg.ppo.optimizer == "adam":
        return torch.optim.Adam(policy.parameters(), lr=cfg.ppo.lr)
    return torch.optim.SGD(policy.parameters(), lr=cfg.ppo.lr)


def train_task(
    policy: RulePolicy,
    task: TaskSpec,
    memories: Sequence[TaskMemory],
    cfg: Config,
    seed: int,
    task_index: int,
    alpha: float | None = None,
    beta: float | None = None,
    log_path=None,
    on_epoch: Callable[[int, RulePolicy], None] | None = None,
    stratified: bool = False,
    epochs: int | None = None,
    compute_importance: bool = True,
) -> TaskMemory | None:
    """Train ``policy`` in place on one task; returns its TaskMemory.

    Importance comes from the final epoch's trajectories, which were sampled
    before that epoch's update; with ``compute_importance=False`` returns None.
    """
    alpha = cfg.train.alpha if alpha is None else alpha
    beta = cfg.train.beta if beta is None else beta
    if alpha < 0 or beta < 0:
        raise ContractError("alpha and beta must be non-negative")
    epochs = cfg.train.epochs if epochs is None else epochs
    opt = make_optimizer(policy, cfg)
    elite = EliteSnapshot(policy.get_flat())
    elite_policy = policy.clone() if beta > 0 else None
    logf = open(log_path, "a") if log_path is not None else None
    trajs = []
    try:
        for epoch in range(epochs):
            trajs, perf = collect_batch(
                policy, task, cfg.train.problems_per_epoch, cfg, batch_seed(seed, task_index, epoch), stratified
            )
            prev = elite
            elite = maybe_update_elite(prev, policy.get_flat(), perf)
            assert elite.score >= prev.score
            if elite_policy is not None and elite is not prev:
                elite_policy.set_flat(elite.params)

            batch = build_ppo_batch(trajs, cfg.ppo.gamma, cfg.ppo.gae_lambda)
            shuffle = np.random.default_rng([seed, task_index, epoch, 1])
            first = None
            for _ in range(cfg.ppo.update_epochs):
                for mb in minibatches(batch.size, cfg.ppo.minibatch_size, shuffle):
                    loss, parts = total_loss(policy, batch.subset(mb), cfg, memories, elite_policy, alpha, beta)
                    if not torch.isfinite(loss):
                        raise TrainingDivergence(
                            f"non-finite loss at task {task_index} epoch {epoch}: {parts}, "
                            f"max |theta| = {np.abs(policy.get_flat()).max():.3g}"
                        )
                    first = first or parts
                    opt.zero_grad()
                    loss.backward()
                    torch.nn.utils.clip_grad_norm_(policy.parameters(), cfg.ppo.max_grad_norm)
                    opt.step()

            row = {
                "epoch": epoch,
                "task": task_index,
                "task_name": task.name,
                "mean_reward": float(np.mean([t.total_reward for t in trajs])),
                "mean_final_best": float(np.mean([t.final_best for t in trajs])),
                "performance": perf,
                "elite_stat": elite.score,
                **first,
            }
            if logf is not None:
                logf.write(json.dumps(row) + "\n")
                logf.flush()
            log.debug("task %d epoch %d: %s", task_index, epoch, row)
            if on_epoch is not None:
                on_epoch(epoch, policy)
    finally:
        if logf is not None:
            logf.close()
    if not compute_importance:
        return None
    omega = ewc_importance(policy, trajs)
    return TaskMemory(task_index, policy.get_flat(), omega)


def read_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
