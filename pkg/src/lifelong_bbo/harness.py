"""Evaluation protocol and reporting: raw objectives, normalization, ranks, curves, sweeps."""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from . import expr
from .config import Config
from .engine import run_episodes
from .errors import ContractError
from .guide import run_guide_episode
from .lifelong import RunManifest, load_run_checkpoint, run_lifelong
from .policy import RulePolicy, load_checkpoint
from .problems import TaskSpec, normalize_objective
from .trainer import sample_batch_problems

GUIDE_METHOD = "guide-DE"


def eval_seed_sequence(task: TaskSpec, seed: int) -> np.random.SeedSequence:
    """Evaluation stream of a task; the i-th problem does not depend on how many are drawn."""
    return np.random.SeedSequence([seed, 1, *task.function_ids])


def evaluate_policy(policy, task: TaskSpec, cfg: Config, n: int | None = None, seed: int | None = None):
    """Episodes on the evaluation problems; returns (raw final objectives, function ids).

    Decoding follows ``cfg.eval.decode``; sampled decoding draws from the fixed
    evaluation streams, so both modes are deterministic.
    """
    n = cfg.eval.n_problems if n is None else n
    seed = cfg.eval.seed if seed is None else seed
    problems, env_rngs, _ = sample_batch_problems(task, n, eval_seed_sequence(task, seed))
    trajs = run_episodes(
        problems,
        policy,
        [None] * n,
        cfg.problem.horizon,
        cfg.problem.pop_size,
        env_rngs,
        cfg.train.reward_variant,
        greedy=cfg.eval.decode == "greedy",
        record=False,
    )
    return np.array([t.final_best for t in trajs]), np.array([p.function_id for p in problems])


def evaluate_model(checkpoint, task: TaskSpec, cfg: Config, n: int | None = None, seed: int | None = None):
    """Load a checkpoint (refusing a config-hash mismatch) and evaluate it."""
    policy, _ = load_checkpoint(checkpoint, cfg.config_hash())
    return evaluate_policy(policy, task, cfg, n, seed)


def evaluate_guide(task: TaskSpec, cfg: Config, n: int | None = None, seed: int | None = None):
    """The guide optimizer run standalone on the same problems and initial populations."""
    n = cfg.eval.n_problems if n is None else n
    seed = cfg.eval.seed if seed is None else seed
    problems, env_rngs, _ = sample_batch_problems(task, n, eval_seed_sequence(task, seed))
    raw = [
        run_guide_episode(p, cfg.problem.horizon, cfg.problem.pop_size, rng, cfg.guide)
        for p, rng in zip(problems, env_rngs)
    ]
    return np.array(raw), np.array([p.function_id for p in problems])


# ------------------------------------------------------------------ reports


@dataclass
class EvalReport:
    """Raw results of one method: per task a (runs, problems) matrix of final objectives."""

    method: str
    raw: dict[str, np.ndarray] = field(default_factory=dict)
    function_ids: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, task_name: str, raw, fids) -> None:
        raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
        fids = np.asarray(fids)
        if task_name in self.raw:
            if not np.array_equal(self.function_ids[task_name], fids):
                raise ContractError(f"{self.method}: problem set of {task_name} changed between runs")
            raw = np.vstack([self.raw[task_name], raw])
        self.raw[task_name] = raw
        self.function_ids[task_name] = fids

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "raw": {k: v.tolist() for k, v in self.raw.items()},
            "function_ids": {k: v.tolist() for k, v in self.function_ids.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        r = cls(d["method"])
        for k in d["raw"]:
            r.add(k, d["raw"][k], d["function_ids"][k])
        return r


def worst_registry(reports: Iterable[EvalReport]) -> dict[int, float]:
    """Per function, the largest final objective over every run of every method."""
    reg: dict[int, float] = {}
    for r in reports:
        for task, raw in r.raw.items():
            fids = r.function_ids[task]
            for fid in np.unique(fids):
                w = float(raw[:, fids == fid].max())
                reg[int(fid)] = max(reg.get(int(fid), -np.inf), w)
    return reg


def normalized(report: EvalReport, registry: dict[int, float], f_opt: float = 0.0) -> dict[str, np.ndarray]:
    """Per task, the (runs, problems) matrix of normalized scores; 1 = optimum, 0 = worst seen."""
    out = {}
    for task, raw in report.raw.items():
        worst = np.array([registry[int(f)] for f in report.function_ids[task]])
        # a function every method solved exactly: all runs score 1
        solved = worst <= f_opt
        safe = np.where(solved, f_opt + 1.0, worst)
        out[task] = np.where(solved, 1.0, normalize_objective(raw, safe, f_opt))
    return out


def mean_scores(reports: Sequence[EvalReport], registry: dict[int, float] | None = None):
    """(tasks, methods x tasks matrix of mean normalized score)."""
    reg = worst_registry(reports) if registry is None else registry
    tasks = list(reports[0].raw)
    M = np.array([[normalized(r, reg)[t].mean() for t in tasks] for r in reports])
    return tasks, M


def build_rank_table(reports: Sequence[EvalReport], registry: dict[int, float] | None = None) -> dict:
    """Per-task ranks (1 = best, ties share the average rank) and the average over tasks."""
    if len(reports) < 2:
        raise ContractError("need at least two methods to rank")
    ref = reports[0]
    for r in reports[1:]:
        if list(r.raw) != list(ref.raw) or any(
            not np.array_equal(r.function_ids[t], ref.function_ids[t]) for t in ref.raw
        ):
            raise ContractError(f"{r.method} was evaluated on a different problem set than {ref.method}")
    tasks, M = mean_scores(reports, registry)
    ranks = np.column_stack([rankdata(-M[:, j], method="average") for j in range(len(tasks))])
    return {
        "methods": [r.method for r in reports],
        "tasks": tasks,
        "mean_normalized": M.tolist(),
        "ranks": ranks.tolist(),
        "average_rank": ranks.mean(axis=1).tolist(),
    }


def evaluate_manifest(manifest: RunManifest, cfg: Config, method: str | None = None, ref=None) -> EvalReport:
    """Evaluate one checkpoint of a run (default: the final one) on every task of its order."""
    ref = manifest.final_checkpoint() if ref is None else ref
    policy = load_run_checkpoint(manifest, ref)
    rep = EvalReport(method or manifest.regime)
    for cat in manifest.order:
        rep.add(cat, *evaluate_policy(policy, cfg.problem.task((cat,)), cfg))
    return rep


def compare(manifests: Sequence[RunManifest], cfg: Config, include_guide: bool = False) -> dict:
    """Rank table over regimes; manifests sharing a regime are pooled as repeats."""
    by_method: dict[str, EvalReport] = {}
    for m in manifests:
        rep = evaluate_manifest(m, cfg)
        tgt = by_method.setdefault(m.regime, EvalReport(m.regime))
        for t in rep.raw:
            tgt.add(t, rep.raw[t], rep.function_ids[t])
    reports = list(by_method.values())
    if include_guide:
        g = EvalReport(GUIDE_METHOD)
        for cat in reports[0].raw:
            g.add(cat, *evaluate_guide(cfg.problem.task((cat,)), cfg))
        reports.append(g)
    return build_rank_table(reports)


# ------------------------------------------------------------------ curves and sweeps


def forgetting_curves(manifest: RunManifest, cfg: Config, tasks: Sequence[str] | None = None, registry=None) -> list[dict]:
    """Long-form rows (global_epoch, trained_task, task, mean_normalized) for every checkpoint."""
    tasks = list(manifest.order) if tasks is None else list(tasks)
    reports = []
    for ref in manifest.checkpoints:
        rep = EvalReport(ref.path)
        policy = load_run_checkpoint(manifest, ref)
        for cat in tasks:
            rep.add(cat, *evaluate_policy(policy, cfg.problem.task((cat,)), cfg))
        reports.append(rep)
    reg = worst_registry(reports) if registry is None else registry
    rows = []
    for ref, rep in zip(manifest.checkpoints, reports):
        scores = normalized(rep, reg)
        for cat in tasks:
            rows.append(
                {
                    "global_epoch": ref.global_epoch,
                    "trained_task": ref.task_index,
                    "end_of_task": ref.end_of_task,
                    "task": cat,
                    "mean_normalized": float(scores[cat].mean()),
                }
            )
    return rows


def sensitivity_sweep(alphas, betas, order, repeats: int, cfg: Config, run_dir, base_seed: int = 0) -> dict:
    """libog runs over an (alpha, beta) grid; cell score = mean final all-task normalized score."""
    alphas, betas = list(alphas), list(betas)
    if not alphas or not betas or repeats < 1:
        raise ContractError("sweep needs non-empty grids and repeats >= 1")
    runs = []
    for a in alphas:
        for b in betas:
            cell_cfg = cfg.replace(train={"alpha": float(a), "beta": float(b)})
            for r in range(repeats):
                m = run_lifelong(order, "libog", cell_cfg, base_seed + r, Path(run_dir) / f"alpha{a}_beta{b}")
                runs.append((a, b, base_seed + r, evaluate_manifest(m, cell_cfg)))
    reg = worst_registry(rep for *_, rep in runs)
    rows = []
    for a, b, seed, rep in runs:
        s = normalized(rep, reg)
        rows.append({"alpha": a, "beta": b, "seed": seed, "performance": float(np.mean([v.mean() for v in s.values()]))})
    cells = []
    for a in alphas:
        for b in betas:
            vals = [r["performance"] for r in rows if r["alpha"] == a and r["beta"] == b]
            cells.append({"alpha": a, "beta": b, "mean_performance": float(np.mean(vals)), "runs": len(vals)})
    return {"runs": rows, "cells": cells}


def export_rules(policy: RulePolicy, states, greedy: bool = True, seed: int = 0) -> list[str]:
    """Prefix-notation rule emitted for each state."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    rngs = [np.random.default_rng([seed, i]) for i in range(len(states))]
    return [expr.to_text(a.tree) for a in policy.act(states, rngs, greedy)]


def write_csv(rows: Sequence[dict], path=None) -> None:
    """Long-form CSV to ``path``, or stdout when it is None."""
    fh = sys.stdout if path is None else open(path, "w", newline="")
    try:
        if rows:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    finally:
        if path is not None:
            fh.close()


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2))
