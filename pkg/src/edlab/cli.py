"""Command line entry point: ``edlab curve|dispatch|train|eval|bench --config FILE``.

Exit codes: 0 success, 1 configuration or library error, 2 infeasible network/demand.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dist as dist_mod
from . import experiment, kernel
from .curve import build_curve
from .dist import Penalties
from .errors import ConfigError, EdlabError, InfeasibleError
from .grid import load_network

EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


def _read_config(path) -> tuple[dict, Path]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    try:
        return json.loads(p.read_text()), p.parent
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc


def _resolve(base: Path, p: str) -> str:
    if p.startswith("builtin:") or Path(p).is_absolute():
        return p
    return str(base / p)


def _nodal(net, demand) -> np.ndarray:
    if np.ndim(demand) == 0:
        return net.nodal_demand(float(demand))
    d = np.asarray(demand, dtype=float)
    if d.shape != (len(net.loads),):
        raise ConfigError(f"nodal demand needs one entry per load site ({len(net.loads)}), got {d.size}")
    return d


def cmd_curve(args) -> int:
    doc, base = _read_config(args.config)
    if "network" not in doc or "demand" not in doc:
        raise ConfigError("curve config needs 'network' and 'demand' (total MW or nodal vector)")
    net = load_network(_resolve(base, doc["network"]))
    curve = build_curve(net, _nodal(net, doc["demand"]))
    text = curve.to_csv()
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "curve.csv").write_text(text)
    return 0


def cmd_dispatch(args) -> int:
    doc, base = _read_config(args.config)
    for key in ("network", "distribution", "penalties"):
        if key not in doc:
            raise ConfigError(f"dispatch config is missing {key!r}")
    net = load_network(_resolve(base, doc["network"]))
    dist = dist_mod.from_spec(doc["distribution"])
    pen = Penalties(float(doc["penalties"]["gamma1"]), float(doc["penalties"]["gamma2"]))
    demand = doc.get("demand", dist.mean())
    curve = build_curve(net, _nodal(net, demand))
    res = kernel.optimal_dispatch(curve, dist, pen)
    text = json.dumps(res.to_dict(), indent=2)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "dispatch.json").write_text(text + "\n")
    return 0


def _summary(report: dict) -> None:
    for name, r in report["results"].items():
        if "cost_loss" in r:
            print(f"{name:>14}  mse={r['mse']:.6g}  cost_loss={r['cost_loss']:.6g}")
        elif "hypotheses" in r:
            for h, m in r["hypotheses"].items():
                print(f"{name:>14} / {h:<14} cost_ratio={m['cost_ratio']:.4f}  mse_ratio={m['mse_ratio']:.4f}")
        elif "timing" in r:
            t = r["timing"]
            print(f"{name:>14}  {t['mean_seconds']:.3f} s +- {t['std_seconds']:.3f} over {t['repeats']} runs")
        elif "best_val_loss" in r:
            print(f"{name:>14}  best_val_loss={r['best_val_loss']:.6g}  epochs={r['epochs_run']}")
    print(f"content_hash {report['content_hash']}")


def cmd_train(args) -> int:
    cfg = experiment.ExperimentConfig.load(args.config, args.seed, args.out)
    _summary(experiment.train_cmd(cfg))
    return 0


def cmd_eval(args) -> int:
    cfg = experiment.ExperimentConfig.load(args.config, args.seed, args.out)
    _summary(experiment.eval_cmd(cfg, args.plot_csv))
    return 0


def cmd_bench(args) -> int:
    cfg = experiment.ExperimentConfig.load(args.config, args.seed, args.out)
    _summary(experiment.bench(cfg, args.plot_csv))
    return 0


COMMANDS = {"curve": cmd_curve, "dispatch": cmd_dispatch, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="edlab", description="End-to-end learning for economic dispatch")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON config file")
    ap.add_argument("--seed", type=int, default=None, help="override training and synthetic-data seed")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--plot-csv", action="store_true", help="also write per-hour prediction series")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InfeasibleError as exc:
        print(f"edlab: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (EdlabError, OSError) as exc:
        print(f"edlab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
