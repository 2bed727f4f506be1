"""Command-line entry point: ``ocslab <subcommand> [--config PATH] [--out DIR] ...``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from ..errors import OcsLabError
from ..netcore import save_checkpoint
from .config import ExperimentConfig, load_config
from .report import SummaryRow, charts_from_csv, emit_report, write_csv
from .sweeps import run_decision_sweep, run_flow_sweep, run_probe_sweep, run_reversion_sweep, run_training

COMMANDS = ("train", "sweep-reversion", "sweep-probe", "sweep-decide", "flow", "report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocslab", description="Desk-scale OCS reversion experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--out", help="output directory (default: the config's 'out')")
        if name == "report":
            p.add_argument("--rows", help="CSV to plot (default: <out>/rows.csv)")
            continue
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, help="run this single seed instead of the config's list")
        p.add_argument("--mnist-images", help="IDX image file (switches the dataset to MNIST)")
        p.add_argument("--mnist-labels", help="IDX label file")
        p.add_argument("--no-svg", action="store_true", help="skip SVG charts")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if bool(args.mnist_images) != bool(args.mnist_labels):
        raise OcsLabError("--mnist-images and --mnist-labels must be given together")
    if args.mnist_images:
        cfg = replace(cfg, data=replace(cfg.data, kind="mnist", images=args.mnist_images, labels=args.mnist_labels))
    if args.seed is not None:
        cfg = cfg.with_seeds([args.seed])
    if args.out:
        cfg = replace(cfg, out=args.out)
    return cfg


def _train(cfg: ExperimentConfig, out: Path) -> None:
    history = []
    for seed in sorted(cfg.seeds):
        model, loss, hist = run_training(cfg, seed)
        save_checkpoint(out / f"model_seed{seed}.ckpt", model, loss, {"name": cfg.name, "seed": str(seed), "steps": str(len(hist))})
        history.extend({"seed": seed, "step": step, "loss": value} for step, value in hist)
    write_csv(history, out / "history.csv")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            out = Path(args.out or "out")
            rows = Path(args.rows) if args.rows else out / "rows.csv"
            for path in charts_from_csv(rows, out):
                print(path)
            return 0

        cfg = resolve_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        charts = not args.no_svg
        if args.command == "train":
            _train(cfg, out)
        elif args.command == "flow":
            res = run_flow_sweep(cfg)
            emit_report(res.rows, out, res.summary, charts=charts, x="step",
                        metrics=("mean_stable_rank", "normalized_margin"))
        else:
            sweep = {
                "sweep-reversion": run_reversion_sweep,
                "sweep-probe": run_probe_sweep,
                "sweep-decide": run_decision_sweep,
            }[args.command]
            res = sweep(cfg)
            metrics = ("mean_reward", "abstain_rate") if args.command == "sweep-decide" else ("dist_to_ocs", "ood_score")
            emit_report(res.rows, out, res.summary, charts=charts, metrics=metrics)
            _print_summary(res.summary)
    except (OcsLabError, OSError, ValueError) as exc:
        print(f"ocslab: error: {exc}", file=sys.stderr)
        return 1
    return 0


def _print_summary(summary: list[SummaryRow]) -> None:
    for s in summary:
        print(f"seed {s.seed}  {s.statistic} = {s.value:.4f}")


if __name__ == "__main__":
    sys.exit(main())
