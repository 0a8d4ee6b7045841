"""Command-line entry point: ``lifelong-bbo <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import Config, desk_config, load_config
from .engine import Trajectory
from .harness import (
    compare,
    evaluate_model,
    export_rules,
    forgetting_curves,
    sensitivity_sweep,
    write_csv,
    write_json,
)
from .lifelong import REGIMES, RunManifest, run_lifelong
from .policy import load_checkpoint


def _config(args) -> Config:
    if args.config:
        return load_config(args.config)
    return desk_config() if args.preset == "desk" else Config().validate()


def _order(text: str):
    return int(text) if text.isdigit() else tuple(text.replace(",", "").replace("-", ""))


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _emit(obj, out) -> None:
    if out:
        write_json(obj, out)
    else:
        json.dump(obj, sys.stdout, indent=2)
        sys.stdout.write("\n")


def cmd_train(args) -> int:
    cfg = _config(args)
    m = run_lifelong(_order(args.order), args.regime, cfg, args.seed, args.run_dir)
    print(Path(m.root) / "manifest.json")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    raw, fids = evaluate_model(args.checkpoint, cfg.problem.task(tuple(args.task)), cfg, args.n, args.seed)
    _emit({"task": args.task, "function_ids": fids.tolist(), "raw": raw.tolist()}, args.out)
    return 0


def cmd_compare(args) -> int:
    manifests = [RunManifest.load(p) for p in args.manifests]
    cfg = load_config(Path(manifests[0].root) / manifests[0].config_path)
    for m in manifests[1:]:
        if m.config_hash != manifests[0].config_hash:
            raise SystemExit(f"{m.root}: config hash differs from {manifests[0].root}")
    _emit(compare(manifests, cfg, include_guide=args.guide), args.out)
    return 0


def cmd_curves(args) -> int:
    m = RunManifest.load(args.manifest)
    cfg = load_config(Path(m.root) / m.config_path)
    rows = forgetting_curves(m, cfg)
    write_csv(rows, args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    res = sensitivity_sweep(_floats(args.alphas), _floats(args.betas), _order(args.order), args.repeats, cfg, args.run_dir, args.seed)
    if args.out:
        write_csv(res["cells"], args.out)
    else:
        _emit(res, None)
    return 0


def cmd_export_rules(args) -> int:
    policy, _ = load_checkpoint(args.checkpoint)
    if args.states:
        text = Path(args.states).read_text()
        if args.states.endswith(".npy"):
            states = np.load(args.states)
        else:
            states = np.array([s.state for s in Trajectory.from_jsonl(text).steps])
    else:
        states = np.random.default_rng(args.seed).random((args.n, 9))
    rules = export_rules(policy, states, greedy=not args.sample, seed=args.seed)
    for s, r in zip(states, rules):
        print(json.dumps({"state": np.round(s, 6).tolist(), "rule": r}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lifelong-bbo")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--preset", choices=("full", "desk"), default="desk")

    p = sub.add_parser("train", help="run one regime over a task order")
    with_config(p)
    p.add_argument("--regime", choices=REGIMES, default="libog")
    p.add_argument("--order", default="0", help="built-in order index or categories, e.g. UBC")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--run-dir", default="runs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="greedy evaluation of a checkpoint on one task")
    with_config(p)
    p.add_argument("checkpoint")
    p.add_argument("--task", required=True, help="categories, e.g. U or UB")
    p.add_argument("-n", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="rank table over run manifests")
    p.add_argument("manifests", nargs="+")
    p.add_argument("--guide", action="store_true", help="add the guide optimizer as a method")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("curves", help="forgetting curves of one run as CSV")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("sweep", help="alpha/beta sensitivity grid")
    with_config(p)
    p.add_argument("--alphas", default="0.1,1,10")
    p.add_argument("--betas", default="0.1,1,10")
    p.add_argument("--order", default="0")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--run-dir", default="runs/sweep")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-rules", help="dump the rules a checkpoint emits")
    p.add_argument("checkpoint")
    p.add_argument("--states", help=".npy array or trajectory JSONL")
    p.add_argument("-n", type=int, default=8, help="random states when --states is absent")
    p.add_argument("--sample", action="store_true", help="sample instead of greedy decode")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_export_rules)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
