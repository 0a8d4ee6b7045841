"""Task-sequence schedules for the lifelong regimes and their ablations."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import Config, dump_config
from .errors import ConfigError
from .policy import RulePolicy, load_checkpoint, save_checkpoint
from .problems import CATEGORIES
from .trainer import TaskMemory, train_task

REGIMES = ("libog", "fine_tuning", "restart", "all_task", "only_inter", "only_intra")


@dataclass
class CheckpointRef:
    path: str
    task_index: int
    epoch: int  # epochs completed within the task
    global_epoch: int
    end_of_task: bool


@dataclass
class RunManifest:
    regime: str
    order: list[str]
    seed: int
    config_hash: str
    alpha: float
    beta: float
    config_path: str
    checkpoints: list[CheckpointRef] = field(default_factory=list)
    logs: list[str] = field(default_factory=list)
    memories: list[str] = field(default_factory=list)
    root: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        d["checkpoints"] = [CheckpointRef(**c) for c in d["checkpoints"]]
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunManifest":
        m = cls.from_json(Path(path).read_text())
        m.root = str(Path(path).parent)
        return m

    def resolve(self, rel: str) -> Path:
        return Path(self.root) / rel

    def task_end_checkpoints(self) -> list[CheckpointRef]:
        return [c for c in self.checkpoints if c.end_of_task]

    def final_checkpoint(self) -> CheckpointRef:
        return self.checkpoints[-1]


def regime_weights(regime: str, cfg: Config) -> tuple[float, float]:
    a, b = cfg.train.alpha, cfg.train.beta
    weights = {
        "libog": (a, b),
        "only_inter": (a, 0.0),
        "only_intra": (0.0, b),
        "fine_tuning": (0.0, 0.0),
        "restart": (0.0, 0.0),
        "all_task": (0.0, 0.0),
    }
    if regime not in weights:
        raise ConfigError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    return weights[regime]


def order_tag(order) -> str:
    return "-".join(order)


def run_key_dir(run_dir, regime: str, order, seed: int) -> Path:
    return Path(run_dir) / regime / order_tag(order) / f"seed{seed}"


def init_seed(seed: int, task_index: int) -> int:
    return int(np.random.SeedSequence([seed, task_index, 99991]).generate_state(1)[0])


def run_lifelong(order, regime: str, cfg: Config, seed: int, run_dir) -> RunManifest:
    """Train one regime over a task order and write checkpoints plus a manifest.

    Batch seeds depend only on (seed, task index, epoch), so regimes that share
    a prefix of the schedule see identical problems and random streams.
    """
    cfg.validate()
    order = list(cfg.order(order))
    if any(c not in CATEGORIES for c in order):
        raise ConfigError(f"bad task order {order}")
    alpha, beta = regime_weights(regime, cfg)
    root = run_key_dir(run_dir, regime, order, seed)
    root.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, root / "config.yaml")
    chash = cfg.config_hash()
    manifest = RunManifest(regime, order, seed, chash, alpha, beta, "config.yaml", root=str(root))
    every = cfg.train.checkpoint_every

    keep_memories = regime in ("libog", "only_inter")
    if regime == "all_task":
        phases = [(0, cfg.problem.task(order), cfg.train.epochs * len(order), True)]
    else:
        phases = [(i, cfg.problem.task((c,)), cfg.train.epochs, False) for i, c in enumerate(order)]

    policy = RulePolicy(cfg.policy.hidden, init_seed(seed, 0), cfg.policy.head_scale)
    memories: list[TaskMemory] = []
    global_epoch = 0
    for task_index, task, epochs, stratified in phases:
        if regime == "restart" and task_index > 0:
            policy = RulePolicy(cfg.policy.hidden, init_seed(seed, task_index), cfg.policy.head_scale)
        log_rel = f"train_task{task_index}.jsonl"
        (root / log_rel).unlink(missing_ok=True)
        manifest.logs.append(log_rel)
        start = global_epoch

        def save(epoch, pol, end=False, task_index=task_index, start=start):
            rel = f"ckpt_t{task_index}_e{epoch:04d}.npz"
            meta = {"regime": regime, "task_index": task_index, "epoch": epoch, "seed": seed}
            save_checkpoint(pol, root / rel, chash, meta)
            manifest.checkpoints.append(CheckpointRef(rel, task_index, epoch, start + epoch, end))

        if task_index == 0 or regime == "restart":
            save(0, policy)

        def on_epoch(epoch, pol, epochs=epochs, save=save):
            done = epoch + 1
            if done == epochs:
                save(done, pol, end=True)
            elif done % every == 0:
                save(done, pol)

        mem = train_task(
            policy,
            task,
            memories,
            cfg,
            seed,
            task_index,
            alpha,
            beta,
            log_path=root / log_rel,
            on_epoch=on_epoch,
            stratified=stratified,
            epochs=epochs,
            compute_importance=keep_memories,
        )
        global_epoch += epochs
        if keep_memories:
            memories.append(mem)
            rel = f"memory_t{task_index}.npz"
            mem.save(root / rel)
            manifest.memories.append(rel)

    (root / "manifest.json").write_text(manifest.to_json())
    return manifest


def load_run_checkpoint(manifest: RunManifest, ref: CheckpointRef) -> RulePolicy:
    return load_checkpoint(manifest.resolve(ref.path), manifest.config_hash)[0]
