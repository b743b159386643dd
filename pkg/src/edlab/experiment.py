"""Experiment configuration, the bench/robustness/efficiency drivers and report I/O."""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import learn
from .dist import Penalties
from .errors import ConfigError
from .grid import Network, load_network

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
TIMING_KEYS = frozenset({"train_seconds", "seconds", "timing", "wall_clock"})
EVAL_ONLY = ("oracle",)

DEFAULT_TRAIN = {
    "learning_rate": 1e-3, "batch_size": 32, "max_epochs": 500, "patience": 10,
    "seed": 0, "family": "normal", "hidden": [128, 128],
}


@dataclass
class ExperimentConfig:
    network: str
    data: dict
    penalties: Penalties
    frameworks: list[str]
    train: dict
    split: data_mod.SplitSpec
    output_dir: str = "out"
    curve_mode: str = "fixed-mean"
    curve_bins: int = 32
    enforce_paper_regime: bool = False
    mode: str = "standard"
    robustness: dict = field(default_factory=dict)
    efficiency: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)
    base_dir: str = "."

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".", seed: int | None = None, out: str | None = None):
        doc = copy.deepcopy(doc)
        if seed is not None:
            doc.setdefault("train", {})["seed"] = int(seed)
            synth = doc.get("data", {}).get("synth")
            if synth is not None:
                synth["seed"] = int(seed)
        if out is not None:
            doc["output_dir"] = out
        for key in ("network", "data", "penalties"):
            if key not in doc:
                raise ConfigError(f"config is missing required key {key!r}")
        pen_doc = doc["penalties"]
        try:
            pen = Penalties(float(pen_doc["gamma1"]), float(pen_doc["gamma2"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError("penalties must be an object with gamma1 and gamma2") from exc
        train = {**DEFAULT_TRAIN, **doc.get("train", {})}
        unknown = set(train) - set(DEFAULT_TRAIN)
        if unknown:
            raise ConfigError(f"unknown train options: {sorted(unknown)}")
        frameworks = list(doc.get("frameworks", ["mse", "task_specific", "model_free"]))
        for fw in frameworks:
            if fw not in learn.FRAMEWORKS and fw not in EVAL_ONLY:
                raise ConfigError(f"unknown framework {fw!r}; choose from {learn.FRAMEWORKS + EVAL_ONLY}")
        split = doc.get("split", {"train_days": 1200, "val_days": 200, "test_days": 400})
        try:
            split = data_mod.SplitSpec(**split)
        except TypeError as exc:
            raise ConfigError(f"split needs train_days, val_days, test_days: {exc}") from exc
        cfg = cls(
            network=str(doc["network"]), data=doc["data"], penalties=pen, frameworks=frameworks,
            train=train, split=split, output_dir=doc.get("output_dir", "out"),
            curve_mode=doc.get("curve_mode", "fixed-mean"), curve_bins=int(doc.get("curve_bins", 32)),
            enforce_paper_regime=bool(doc.get("enforce_paper_regime", False)),
            mode=doc.get("mode", "standard"), robustness=doc.get("robustness", {}),
            efficiency=doc.get("efficiency", {}), models=doc.get("models", {}),
            raw=doc, base_dir=str(base_dir),
        )
        cfg._check_files()
        return cfg

    @classmethod
    def load(cls, path, seed=None, out=None) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, base_dir=path.parent, seed=seed, out=out)

    def resolve(self, p: str) -> str:
        if p.startswith("builtin:") or os.path.isabs(p):
            return p
        return str(Path(self.base_dir) / p)

    def _check_files(self):
        if self.curve_mode not in ("fixed-mean", "per-slot"):
            raise ConfigError(f"curve_mode must be 'fixed-mean' or 'per-slot', got {self.curve_mode!r}")
        if self.mode not in ("standard", "robustness", "efficiency"):
            raise ConfigError(f"mode must be standard, robustness or efficiency, got {self.mode!r}")
        if not self.network.startswith("builtin:") and not Path(self.resolve(self.network)).exists():
            raise ConfigError(f"network file {self.resolve(self.network)} does not exist")
        if "csv" in self.data:
            if not Path(self.resolve(self.data["csv"])).exists():
                raise ConfigError(f"data file {self.resolve(self.data['csv'])} does not exist")
        elif "synth" not in self.data:
            raise ConfigError("data must name either a 'csv' file or a 'synth' spec")

    def train_config(self, framework: str, family: str | None = None) -> learn.TrainConfig:
        t = dict(self.train)
        t["hidden"] = tuple(t["hidden"])
        if family is not None:
            t["family"] = family
        return learn.TrainConfig(framework=framework, **t)

    def check_regime(self, net: Network):
        if not self.enforce_paper_regime:
            return
        top = float(np.max(net.costs))
        if not self.penalties.gamma1 > top:
            raise ConfigError(
                f"gamma1={self.penalties.gamma1} must exceed the largest marginal cost {top} "
                "(set enforce_paper_regime to false to allow it)")
        if not self.penalties.gamma1 > self.penalties.gamma2:
            raise ConfigError("gamma1 must exceed gamma2 under enforce_paper_regime")


# -- helpers -----------------------------------------------------------------------

def load_series(cfg: ExperimentConfig, synth_override: dict | None = None) -> data_mod.LoadSeries:
    if synth_override is not None:
        return data_mod.synth(data_mod.SynthSpec.from_dict(synth_override))
    if "csv" in cfg.data:
        return data_mod.load_csv(cfg.resolve(cfg.data["csv"]), allow_gaps=bool(cfg.data.get("allow_gaps", False)))
    return data_mod.synth(data_mod.SynthSpec.from_dict(cfg.data["synth"]))


def strip_timing(obj):
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def content_hash(config: dict, results) -> str:
    config = {k: v for k, v in config.items() if k != "output_dir"}
    payload = json.dumps({"config": config, "results": strip_timing(results)}, sort_keys=True, allow_nan=True)
    return hashlib.sha256(payload.encode()).hexdigest()


class Report:
    """JSON report that is rewritten after every framework so partial results survive."""

    def __init__(self, kind: str, cfg: ExperimentConfig):
        self.kind = kind
        self.cfg = cfg
        self.results: dict = {}
        self.status = "running"
        self.error: str | None = None
        self.extra: dict = {}

    def to_dict(self) -> dict:
        echo = strip_timing(self.cfg.raw)
        doc = {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "status": self.status,
            "config": echo,
            "results": self.results,
            **self.extra,
        }
        if self.error:
            doc["error"] = self.error
        doc["content_hash"] = content_hash(echo, {"results": self.results, **strip_timing(self.extra)})
        return doc

    def flush(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{self.kind}_report.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        tmp.replace(path)
        return path


def read_report(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported report schema {doc.get('schema_version')!r}")
    for key in ("kind", "status", "config", "results", "content_hash"):
        if key not in doc:
            raise ConfigError(f"{path}: report lacks {key!r}")
    return doc


def write_table(results: dict, path) -> None:
    """One row per framework: overall metrics, per-period metrics and run statistics."""
    periods = [p[2] for p in learn.PERIODS]
    header = ["framework", "n", "mse", "cost_loss", "cost_loss_std"]
    for p in periods:
        header += [f"{p}_count", f"{p}_mse", f"{p}_cost_loss"]
    header += ["epochs_run", "best_epoch", "train_seconds"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for name, r in results.items():
            if "cost_loss" not in r:
                continue
            row = [name, r["n"], repr(r["mse"]), repr(r["cost_loss"]), repr(r["cost_loss_std"])]
            for p in r["periods"]:
                row += [p["count"], repr(p["mse"]), repr(p["cost_loss"])]
            row += [r.get("epochs_run", ""), r.get("best_epoch", ""), r.get("train_seconds", "")]
            w.writerow(row)


# -- drivers -------------------------------------------------------------------------

@dataclass
class Prepared:
    net: Network
    train: data_mod.SampleSet
    val: data_mod.SampleSet
    test: data_mod.SampleSet
    ctx: learn.DispatchContext


def prepare(cfg: ExperimentConfig, synth_override: dict | None = None) -> Prepared:
    net = load_network(cfg.resolve(cfg.network))
    cfg.check_regime(net)
    series = load_series(cfg, synth_override)
    tr, va, te = data_mod.make_samples(series, cfg.split)
    ctx = learn.DispatchContext.fit(net, cfg.penalties, tr, cfg.curve_mode, cfg.curve_bins)
    for part in (tr, va, te):
        ctx.indices(part)  # build every per-slot curve up front
    return Prepared(net, tr, va, te, ctx)


def run_framework(cfg: ExperimentConfig, prep: Prepared, framework: str, family: str | None = None):
    """Train one framework (or evaluate the oracle) and score it on the test split."""
    if framework == "oracle":
        idx = prep.ctx.indices(prep.test)
        metrics = learn.score(prep.test.y, prep.test.y, prep.test, prep.ctx, idx)
        return None, {**metrics, "epochs_run": 0, "best_epoch": 0, "train_seconds": 0.0}
    res = learn.train(prep.train, prep.val, cfg.train_config(framework, family), prep.ctx)
    metrics = learn.evaluate(res.predictor, prep.test, prep.ctx)
    metrics.update(epochs_run=res.epochs_run, best_epoch=res.best_epoch,
                   best_val_loss=res.best_val, train_seconds=res.seconds)
    return res.predictor, metrics


def predictions(prep: Prepared, models: dict) -> dict:
    idx = prep.ctx.indices(prep.test)
    out = {}
    for name, pred in models.items():
        out[name] = prep.test.y.copy() if pred is None else pred.decide(prep.test.X, prep.ctx, idx)[1]
    return out


def write_series(prep: Prepared, series: dict, path) -> None:
    names = list(series)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "hour", "demand", *names])
        for i, t in enumerate(prep.test.timestamps):
            w.writerow([str(t), int(prep.test.hours[i]), repr(float(prep.test.y[i])),
                        *[repr(float(series[n][i])) for n in names]])


def bench(cfg: ExperimentConfig, plot_csv: bool = False) -> dict:
    if cfg.mode == "robustness":
        return robustness(cfg)
    if cfg.mode == "efficiency":
        return efficiency(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = Report("bench", cfg)
    prep = prepare(cfg)
    report.extra["curve"] = _curve_info(prep.ctx)
    models = {}
    try:
        for fw in cfg.frameworks:
            logger.info("training %s", fw)
            pred, metrics = run_framework(cfg, prep, fw)
            models[fw] = pred
            report.results[fw] = metrics
            if pred is not None:
                pred.save(out / f"model_{fw}.json")
            report.flush(out)
    except Exception as exc:
        report.status = "failed"
        report.error = f"{type(exc).__name__}: {exc}"
        report.flush(out)
        raise
    report.status = "complete"
    path = report.flush(out)
    write_table(report.results, out / "bench_table.csv")
    if plot_csv:
        write_series(prep, predictions(prep, models), out / "bench_series.csv")
    logger.info("report written to %s", path)
    return report.to_dict()


def train_cmd(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.output_dir)
    report = Report("train", cfg)
    prep = prepare(cfg)
    try:
        for fw in cfg.frameworks:
            if fw in EVAL_ONLY:
                continue
            res = learn.train(prep.train, prep.val, cfg.train_config(fw), prep.ctx)
            out.mkdir(parents=True, exist_ok=True)
            res.predictor.save(out / f"model_{fw}.json")
            report.results[fw] = {
                "model": f"model_{fw}.json", "history": res.history, "epochs_run": res.epochs_run,
                "best_epoch": res.best_epoch, "best_val_loss": res.best_val, "train_seconds": res.seconds,
            }
            report.flush(out)
    except Exception as exc:
        report.status, report.error = "failed", f"{type(exc).__name__}: {exc}"
        report.flush(out)
        raise
    report.status = "complete"
    report.flush(out)
    return report.to_dict()


def eval_cmd(cfg: ExperimentConfig, plot_csv: bool = False) -> dict:
    out = Path(cfg.output_dir)
    report = Report("eval", cfg)
    prep = prepare(cfg)
    models = {}
    for fw in cfg.frameworks:
        if fw in EVAL_ONLY:
            models[fw] = None
            report.results[fw] = learn.score(prep.test.y, prep.test.y, prep.test, prep.ctx)
            continue
        path = Path(cfg.resolve(cfg.models[fw])) if fw in cfg.models else out / f"model_{fw}.json"
        if not path.exists():
            raise ConfigError(f"no model file for {fw!r} at {path}; run `edlab train` first or set models.{fw}")
        pred = learn.Predictor.load(path)
        models[fw] = pred
        report.results[fw] = learn.evaluate(pred, prep.test, prep.ctx)
    report.status = "complete"
    report.flush(out)
    write_table(report.results, out / "eval_table.csv")
    if plot_csv:
        write_series(prep, predictions(prep, models), out / "eval_series.csv")
    return report.to_dict()


def robustness(cfg: ExperimentConfig) -> dict:
    """Cross true generating families with task-specific hypothesis families.

    Each true family replaces the noise of the synthetic spec; every
    hypothesis is compared with the model-free benchmark trained on the
    same data, as cost-loss and error ratios.
    """
    if "synth" not in cfg.data:
        raise ConfigError("robustness mode needs a synthetic data spec")
    truths = cfg.robustness.get("true_families")
    hyps = cfg.robustness.get("hypotheses", ["normal"])
    if not truths:
        raise ConfigError("robustness.true_families must list distribution specs")
    out = Path(cfg.output_dir)
    report = Report("robustness", cfg)
    try:
        for truth in truths:
            synth = {**cfg.data["synth"], "family": truth}
            prep = prepare(cfg, synth)
            name = truth["family"]
            _, bench_m = run_framework(cfg, prep, "model_free")
            row = {"model_free": bench_m, "hypotheses": {}}
            for h in hyps:
                _, m = run_framework(cfg, prep, "task_specific", h)
                m["cost_ratio"] = m["cost_loss"] / bench_m["cost_loss"]
                m["mse_ratio"] = m["mse"] / bench_m["mse"]
                row["hypotheses"][h] = m
                report.results[name] = row
                report.flush(out)
            report.results[name] = row
            report.flush(out)
    except Exception as exc:
        report.status, report.error = "failed", f"{type(exc).__name__}: {exc}"
        report.flush(out)
        raise
    report.status = "complete"
    report.flush(out)
    with open(out / "robustness_table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true_family", "hypothesis", "cost_loss", "model_free_cost_loss", "cost_ratio", "mse_ratio"])
        for name, row in report.results.items():
            for h, m in row["hypotheses"].items():
                w.writerow([name, h, repr(m["cost_loss"]), repr(row["model_free"]["cost_loss"]),
                            repr(m["cost_ratio"]), repr(m["mse_ratio"])])
    return report.to_dict()


def efficiency(cfg: ExperimentConfig) -> dict:
    """Wall-clock of each framework over repeated identical runs (monotonic clock)."""
    repeats = int(cfg.efficiency.get("repeats", 3))
    if repeats < 1:
        raise ConfigError("efficiency.repeats must be at least 1")
    out = Path(cfg.output_dir)
    report = Report("efficiency", cfg)
    t0 = time.perf_counter()
    prep = prepare(cfg)
    report.extra["timing"] = {"setup_seconds": time.perf_counter() - t0}
    for fw in cfg.frameworks:
        if fw in EVAL_ONLY:
            continue
        secs, per_epoch, epochs = [], [], []
        for _ in range(repeats):
            t = time.perf_counter()
            res = learn.train(prep.train, prep.val, cfg.train_config(fw), prep.ctx)
            secs.append(time.perf_counter() - t)
            epochs.append(res.epochs_run)
            per_epoch.append(secs[-1] / max(res.epochs_run, 1))
        report.results[fw] = {
            "epochs_run": epochs[0],
            "timing": {
                "repeats": repeats, "seconds": secs, "mean_seconds": float(np.mean(secs)),
                "std_seconds": float(np.std(secs)), "mean_seconds_per_epoch": float(np.mean(per_epoch)),
                "std_seconds_per_epoch": float(np.std(per_epoch)),
            },
        }
        report.flush(out)
    report.status = "complete"
    report.flush(out)
    return report.to_dict()


def _curve_info(ctx: learn.DispatchContext) -> dict:
    c = ctx.bank.curves[0]
    return {"mode": ctx.mode, "n_curves": len(ctx.bank.curves), "g_min": c.g_min, "g_max": c.g_max,
            "breakpoints": c.g.tolist(), "slopes": c.slopes.tolist()}
