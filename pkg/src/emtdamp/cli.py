"""Command line: train, federated, eval, sweep."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, plotting, runner
from .config import ConfigError, build
from .data import DataError
from .em import active_groups
from .metrics import MetricsSink

log = logging.getLogger("emtdamp")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of config keys")
    p.add_argument("--preset", help="boston | mnist | boston-fed | mnist-fed")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="emtdamp", description="EM-TDAMP training of sparse Bayesian ReLU networks")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("train", help="centralized EM training")
    _common(p)
    p.add_argument("--iterations", type=int, help="shorthand for --set iterations=N")
    p = sub.add_parser("federated", help="federated simulation")
    _common(p)
    p.add_argument("--rounds", type=int, help="shorthand for --set rounds=N")
    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("sweep", help="metric against target sparsity")
    _common(p)
    p.add_argument("--repeats", type=int, help="shorthand for --set repeats=N")
    p.add_argument("--federated", action="store_true", help="sweep the federated trainer")
    return ap


def _write_csv(path: Path, rows: list[dict]) -> None:
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def _prepare(args, extra: dict):
    overrides = list(args.set) + [f"{k}={v}" for k, v in extra.items() if v is not None]
    cfg = build(args.preset, args.config, overrides, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _report(out: Path, history: list[dict], metric: str, xkey: str) -> None:
    _write_csv(out / "history.csv", history)
    if history:
        plotting.training_curves(history, metric, out / "history.png", xkey)


def cmd_train(args) -> int:
    cfg, out = _prepare(args, {"iterations": args.iterations})
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    td = runner.load_data(cfg)
    sink = MetricsSink(out / "metrics.jsonl")
    res = runner.train(cfg, td, sink)
    checkpoint.save(out / "checkpoint.json", res.hyper, res.iterations, runner.policy(cfg), cfg.to_dict())
    metric = runner.metric_name(cfg)
    _report(out, res.history, metric, "iteration")
    final = runner.evaluate(res.hyper, td.test)
    print(f"{metric}={final:.6g} iterations={res.iterations} noise_var={res.hyper.noise_var:.6g} active_groups={active_groups(res.hyper)}")
    return 0


def cmd_federated(args) -> int:
    cfg, out = _prepare(args, {"rounds": args.rounds})
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    td = runner.load_data(cfg)
    sink = MetricsSink(out / "metrics.jsonl")
    res = runner.train_federated(cfg, td, sink)
    checkpoint.save(out / "checkpoint.json", res.hyper, res.rounds, runner.policy(cfg), cfg.to_dict())
    metric = runner.metric_name(cfg)
    _report(out, res.history, metric, "round")
    final = runner.evaluate(res.hyper, td.test)
    print(f"{metric}={final:.6g} rounds={res.rounds} noise_var={res.hyper.noise_var:.6g} active_groups={active_groups(res.hyper)}")
    return 0


def cmd_eval(args) -> int:
    doc = checkpoint.load(args.checkpoint)
    base = {k: v for k, v in doc.get("config", {}).items()}
    overrides = [f"{k}={','.join(map(str, v)) if isinstance(v, list) else v}" for k, v in base.items()] + list(args.set)
    cfg = build(args.preset, args.config, overrides, args.seed)
    td = runner.load_data(cfg)
    hyper = doc["hyper"]
    metric = runner.metric_name(hyper.task)
    value = runner.evaluate(hyper, td.test)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "eval.csv", [{"checkpoint": str(args.checkpoint), metric: value, "active_groups": active_groups(hyper)}])
    print(f"{metric}={value:.6g}")
    return 0


def cmd_sweep(args) -> int:
    cfg, out = _prepare(args, {"repeats": args.repeats})
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    td = runner.load_data(cfg)
    metric = runner.metric_name(cfg)
    trainer = runner.train_federated if args.federated else runner.train
    rows = []
    for target in sorted(set(cfg.sparsities)):
        vals, ratios = [], []
        for rep in range(cfg.repeats):
            seed = cfg.seed + rep
            sink = MetricsSink(out / "metrics.jsonl", sparsity=target, seed=seed)
            res = trainer(cfg, td, sink, target=target, seed=seed)
            checkpoint.save(out / f"checkpoint_s{target:g}_seed{seed}.json", res.hyper, len(res.history), runner.policy(cfg, target), cfg.to_dict())
            vals.append(runner.evaluate(res.hyper, td.test))
            ratios.append(active_groups(res.hyper) / res.hyper.n_weight_groups)
        rows.append({"sparsity": target, metric: float(np.mean(vals)), "active_ratio": float(max(ratios)), "repeats": cfg.repeats})
        log.info("sparsity %g: %s=%.4g", target, metric, rows[-1][metric])
    _write_csv(out / "sweep.csv", rows)
    plotting.sparsity_curve(rows, metric, out / "sweep.png")
    for r in rows:
        print(f"sparsity={r['sparsity']:g} {metric}={r[metric]:.6g} active_ratio={r['active_ratio']:.4g}")
    return 0


COMMANDS = {"train": cmd_train, "federated": cmd_federated, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except (ConfigError, DataError, checkpoint.CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
