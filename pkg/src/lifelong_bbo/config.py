"""Run configuration: nested dataclasses, YAML round trip and a content hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .guide import GuideConfig
from .problems import CATEGORY_IDS, TaskSpec

TASK_ORDERS = {
    0: ("U", "B", "H", "C"),
    1: ("C", "U", "B", "H"),
    2: ("U", "C", "H", "B"),
}


@dataclass
class ProblemConfig:
    dim: int = 10
    lb: float = -100.0
    ub: float = 100.0
    offset_range: float = 80.0
    fe_budget: int = 50_000
    pop_size: int = 100

    @property
    def horizon(self) -> int:
        """Rule applications per episode; the initial population uses one budget slice."""
        return self.fe_budget // self.pop_size - 1

    def task(self, categories) -> TaskSpec:
        return TaskSpec(tuple(categories), self.dim, self.lb, self.ub, self.offset_range, self.fe_budget)


@dataclass
class PolicyConfig:
    hidden: int = 64
    head_scale: float = 0.01


@dataclass
class PPOConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    update_epochs: int = 3
    minibatch_size: int = 64
    max_grad_norm: float = 0.5
    lr: float = 0.001
    optimizer: str = "adam"


@dataclass
class TrainConfig:
    alpha: float = 1.0
    beta: float = 1.0
    epochs: int = 100
    problems_per_epoch: int = 320
    reward_variant: str = "descent"
    elite_stat: str = "reward_sum"
    checkpoint_every: int = 1


@dataclass
class EvalConfig:
    n_problems: int = 32
    seed: int = 7_777
    decode: str = "greedy"


@dataclass
class Config:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    guide: GuideConfig = field(default_factory=GuideConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    task_orders: dict = field(default_factory=lambda: {k: list(v) for k, v in TASK_ORDERS.items()})

    def validate(self) -> "Config":
        p, t = self.problem, self.train
        if p.dim < 1 or p.pop_size < 2 or not p.lb < p.ub:
            raise ConfigError("problem block needs dim >= 1, pop_size >= 2 and lb < ub")
        if p.horizon < 0:
            raise ConfigError("fe_budget must cover at least the initial population")
        if t.alpha < 0 or t.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if t.epochs < 1 or t.problems_per_epoch < 1 or t.checkpoint_every < 1:
            raise ConfigError("epochs, problems_per_epoch and checkpoint_every must be positive")
        if t.reward_variant not in ("paper", "descent"):
            raise ConfigError(f"unknown reward variant {t.reward_variant!r}")
        if t.elite_stat not in ("reward_sum", "final_objective"):
            raise ConfigError(f"unknown elite statistic {t.elite_stat!r}")
        if self.eval.decode not in ("greedy", "sample"):
            raise ConfigError(f"unknown decode mode {self.eval.decode!r}")
        if self.ppo.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.ppo.optimizer!r}")
        for k, order in self.task_orders.items():
            if any(c not in CATEGORY_IDS for c in order) or len(set(order)) != len(order):
                raise ConfigError(f"task order {k} is not a list of distinct categories")
        return self

    def order(self, key) -> tuple[str, ...]:
        if isinstance(key, (tuple, list)):
            return tuple(key)
        try:
            return tuple(self.task_orders[int(key)])
        except (KeyError, ValueError):
            raise ConfigError(f"unknown task order {key!r}") from None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["task_orders"] = {int(k): list(v) for k, v in self.task_orders.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        blocks = {
            "problem": ProblemConfig,
            "policy": PolicyConfig,
            "ppo": PPOConfig,
            "train": TrainConfig,
            "guide": GuideConfig,
            "eval": EvalConfig,
        }
        unknown = set(d) - set(blocks) - {"task_orders"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, kind in blocks.items():
            sub = d.get(name) or {}
            names = {f.name for f in dataclasses.fields(kind)}
            bad = set(sub) - names
            if bad:
                raise ConfigError(f"unknown keys in {name}: {sorted(bad)}")
            kwargs[name] = kind(**sub)
        if "task_orders" in d:
            kwargs["task_orders"] = {int(k): list(v) for k, v in d["task_orders"].items()}
        return cls(**kwargs).validate()

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **sections) -> "Config":
        """Copy with some fields overridden, e.g. ``replace(train={"alpha": 0})``."""
        d = self.to_dict()
        for name, updates in sections.items():
            if isinstance(d.get(name), dict) and name != "task_orders":
                d[name].update(updates)
            else:
                d[name] = updates
        return Config.from_dict(d)


def desk_config() -> Config:
    """Small preset that trains in minutes on one core."""
    return Config(
        problem=ProblemConfig(dim=2, fe_budget=310, pop_size=10),
        train=TrainConfig(epochs=30, problems_per_epoch=16, checkpoint_every=10),
        eval=EvalConfig(decode="sample"),
    ).validate()


def load_config(path) -> Config:
    text = Path(path).read_text()
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    preset = data.pop("preset", None)
    if preset == "desk":
        base = desk_config().to_dict()
        for k, v in data.items():
            if isinstance(v, dict) and k != "task_orders":
                base[k].update(v)
            else:
                base[k] = v
        data = base
    elif preset not in (None, "full"):
        raise ConfigError(f"unknown preset {preset!r}")
    return Config.from_dict(data)


def dump_config(cfg: Config, path=None) -> str:
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text
