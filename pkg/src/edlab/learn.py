"""Numpy MLP predictors and the training loops for the three learning criteria.

* ``mse``: predict the load, train on squared error, dispatch the prediction.
* ``task_specific``: predict a demand distribution, dispatch optimally for it
  through the cost-curve kernel and train on the realised dispatch regret.
* ``model_free``: predict the dispatch directly and train on the regret.

All three share the network (inputs -> 128 -> 128 -> head, ReLU), Adam,
minibatches drawn from a seeded generator and validation-based early
stopping that returns the best snapshot seen.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, ndtri

from . import kernel
from .curve import CostCurve, build_curve
from .data import Normalizer, SampleSet
from .dist import FAMILIES, Penalties
from .errors import ConfigError, DimensionMismatch, EmptyDataset, EmpiricalNotDifferentiable
from .grid import Network
from .kernel import CurveBank

logger = logging.getLogger(__name__)

FRAMEWORKS = ("mse", "task_specific", "model_free")
HEAD_SIZE = {"normal": 2, "uniform": 2, "bounded_pareto": 3}
PERIODS = ((0, 6, "midnight"), (6, 12, "morning"), (12, 18, "afternoon"), (18, 24, "evening"))
MODEL_FORMAT = "edlab-model"
MODEL_VERSION = 1


def softplus(x):
    return np.logaddexp(0.0, x)


# -- network ------------------------------------------------------------------

class Mlp:
    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights
        self.biases = biases

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator) -> "Mlp":
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(weights, biases)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def forward(self, X, keep: bool = False):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.sizes[0]:
            raise DimensionMismatch(f"expected {self.sizes[0]} features, got {X.shape[1]}")
        acts = [X]
        h = X
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return (h, acts) if keep else h

    def backward(self, acts, upstream) -> list[np.ndarray]:
        """Gradients of ``sum(upstream * output)`` in the order of ``params``."""
        upstream = np.asarray(upstream, dtype=float)
        if upstream.shape != acts[-1].shape:
            raise DimensionMismatch(f"upstream {upstream.shape} vs output {acts[-1].shape}")
        grads: list[np.ndarray] = []
        delta = upstream
        for i in range(len(self.weights) - 1, -1, -1):
            grads.append(delta.sum(axis=0))
            grads.append(acts[i].T @ delta)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return grads[::-1]

    def to_dict(self) -> dict:
        return {"weights": [w.tolist() for w in self.weights], "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, doc) -> "Mlp":
        return cls([np.array(w, dtype=float) for w in doc["weights"]],
                   [np.array(b, dtype=float) for b in doc["biases"]])

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- configuration and dispatch context ------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    framework: str = "mse"
    family: str = "normal"
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 10
    seed: int = 0
    hidden: tuple[int, ...] = (128, 128)

    def __post_init__(self):
        if self.framework not in FRAMEWORKS:
            raise ConfigError(f"unknown framework {self.framework!r}; choose from {FRAMEWORKS}")
        if self.family not in HEAD_SIZE:
            if self.family == "empirical":
                raise EmpiricalNotDifferentiable("task-specific heads need a parametric family")
            raise ConfigError(f"unknown distribution family {self.family!r}")
        if not (self.learning_rate > 0 and self.batch_size > 0 and self.max_epochs >= 0 and self.patience > 0):
            raise ConfigError("learning_rate, batch_size and patience must be positive")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def head_size(self) -> int:
        return HEAD_SIZE[self.family] if self.framework == "task_specific" else 1


@dataclass(eq=False)
class DispatchContext:
    """Cost curves for a set of samples: a curve bank plus a curve index per sample.

    ``fixed-mean`` uses one curve built at the mean training demand.
    ``per-slot`` keys each sample on the same-hour load of the previous day
    (its oldest lag feature), quantised into ``n_bins`` levels, and builds
    one curve per level actually used.
    """

    net: Network
    pen: Penalties
    mode: str = "fixed-mean"
    mean_demand: float = 0.0
    n_bins: int = 32
    key_range: tuple[float, float] = (0.0, 1.0)
    _curves: dict = field(default_factory=dict, repr=False)
    _bank: CurveBank | None = field(default=None, repr=False)

    @classmethod
    def fit(cls, net: Network, pen: Penalties, train: SampleSet, mode: str = "fixed-mean", n_bins: int = 32):
        if mode not in ("fixed-mean", "per-slot"):
            raise ConfigError(f"unknown curve mode {mode!r}")
        if len(train) == 0:
            raise EmptyDataset("training set is empty")
        key = train.X[:, 0]
        ctx = cls(net, pen, mode, float(train.y.mean()), n_bins, (float(key.min()), float(key.max())))
        if mode == "fixed-mean":
            ctx._curves[0] = build_curve(net, net.nodal_demand(ctx.mean_demand))
            ctx._bank = CurveBank.from_curves([ctx._curves[0]])
        return ctx

    def _level(self, b: int) -> float:
        lo, hi = self.key_range
        if hi <= lo:
            return lo
        return lo + (b + 0.5) * (hi - lo) / self.n_bins

    def indices(self, samples: SampleSet) -> np.ndarray:
        if self.mode == "fixed-mean":
            return np.zeros(len(samples), dtype=np.int64)
        lo, hi = self.key_range
        span = max(hi - lo, 1e-12)
        bins = np.clip(((samples.X[:, 0] - lo) / span * self.n_bins).astype(np.int64), 0, self.n_bins - 1)
        new = [int(b) for b in np.unique(bins) if int(b) not in self._curves]
        for b in new:
            self._curves[b] = build_curve(self.net, self.net.nodal_demand(self._level(b)))
        if new or self._bank is None:
            self._order = sorted(self._curves)
            self._bank = CurveBank.from_curves([self._curves[b] for b in self._order])
        pos = {b: i for i, b in enumerate(self._order)}
        return np.array([pos[int(b)] for b in bins], dtype=np.int64)

    @property
    def bank(self) -> CurveBank:
        return self._bank

    @property
    def curve(self) -> CostCurve:
        return self._bank.curves[0]


# -- heads ------------------------------------------------------------------------

def head_params(family: str, out: np.ndarray, y_mean: float, y_scale: float):
    """Map raw head outputs to (n, 3) distribution parameters and their Jacobian (n, 3, head)."""
    n = out.shape[0]
    P = np.zeros((n, 3))
    J = np.zeros((n, 3, out.shape[1]))
    if family == "normal":
        P[:, 0] = y_mean + y_scale * out[:, 0]
        P[:, 1] = y_scale * softplus(out[:, 1]) + 1e-9 * y_scale
        J[:, 0, 0] = y_scale
        J[:, 1, 1] = y_scale * expit(out[:, 1])
    elif family == "uniform":
        c = y_mean + y_scale * out[:, 0]
        w = y_scale * softplus(out[:, 1]) + 1e-9 * y_scale
        P[:, 0], P[:, 1] = c - w, c + w
        dw = y_scale * expit(out[:, 1])
        J[:, 0, 0] = J[:, 1, 0] = y_scale
        J[:, 0, 1], J[:, 1, 1] = -dw, dw
    elif family == "bounded_pareto":
        L = y_scale * softplus(out[:, 0]) + 1e-6 * y_scale
        H = L + y_scale * softplus(out[:, 1]) + 1e-6 * y_scale
        P[:, 0], P[:, 1] = L, H
        P[:, 2] = softplus(out[:, 2]) + 0.05
        dL = y_scale * expit(out[:, 0])
        J[:, 0, 0] = J[:, 1, 0] = dL
        J[:, 1, 1] = y_scale * expit(out[:, 1])
        J[:, 2, 2] = expit(out[:, 2])
    else:
        raise ConfigError(f"unknown family {family!r}")
    return P, J


def quantile_param_grad(family: str, P: np.ndarray, p: np.ndarray) -> np.ndarray:
    """d quantile(p; params) / d params, shape (n, 3)."""
    G = np.zeros_like(P)
    if family == "normal":
        G[:, 0] = 1.0
        G[:, 1] = ndtri(p)
    elif family == "uniform":
        G[:, 0] = 1.0 - p
        G[:, 1] = p
    else:
        L, H, a = P[:, 0], P[:, 1], P[:, 2]
        r = (L / H) ** a
        u = 1.0 - p * (1.0 - r)
        q = L * u ** (-1.0 / a)
        dq_du = -q / (a * u)
        G[:, 0] = u ** (-1.0 / a) + dq_du * p * a * r / L
        G[:, 1] = dq_du * p * (-a * r / H)
        G[:, 2] = q * np.log(u) / a ** 2 + dq_du * p * r * np.log(L / H)
    return G


FAMILY_CODE = {name: cls.code for name, cls in FAMILIES.items()}


# -- predictor ------------------------------------------------------------------

@dataclass(eq=False)
class Predictor:
    mlp: Mlp
    framework: str
    family: str
    x_norm: Normalizer
    y_mean: float
    y_scale: float

    def raw(self, X) -> np.ndarray:
        return self.mlp.forward(self.x_norm(X))

    def decide(self, X, ctx: DispatchContext, idx=None):
        """Point prediction (for the error metric) and the dispatched total for each row."""
        out = self.raw(X)
        if idx is None:
            idx = np.zeros(out.shape[0], dtype=np.int64)
        bank = ctx.bank
        if self.framework == "task_specific":
            P, _ = head_params(self.family, out, self.y_mean, self.y_scale)
            g, _, _ = kernel.dispatch_many(bank, idx, FAMILY_CODE[self.family], P, ctx.pen)
            return g, g
        y = self.y_mean + self.y_scale * out[:, 0]
        g = bank.clamp(idx, y)
        return (y if self.framework == "mse" else g), g

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "framework": self.framework,
            "family": self.family,
            "x_mean": self.x_norm.mean.tolist(),
            "x_scale": self.x_norm.scale.tolist(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
            "mlp": self.mlp.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Predictor":
        if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
            raise ConfigError("not an edlab model file (or unsupported version)")
        return cls(Mlp.from_dict(doc["mlp"]), doc["framework"], doc["family"],
                   Normalizer(np.array(doc["x_mean"]), np.array(doc["x_scale"])),
                   float(doc["y_mean"]), float(doc["y_scale"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Predictor":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -- objectives --------------------------------------------------------------------

def objective(pred: Predictor, out: np.ndarray, y: np.ndarray, idx: np.ndarray, ctx: DispatchContext | None):
    """Mean training loss of a batch and its gradient w.r.t. the raw network output."""
    n = y.size
    if pred.framework == "mse":
        yhat = pred.y_mean + pred.y_scale * out[:, 0]
        r = yhat - y
        return float(np.mean(r * r)), (2.0 * pred.y_scale / n * r)[:, None]
    bank, pen = ctx.bank, ctx.pen
    if pred.framework == "model_free":
        g_raw = pred.y_mean + pred.y_scale * out[:, 0]
        g = bank.clamp(idx, g_raw)
        val, grad = kernel.qloss_many(bank, idx, g, y, pen)
        inside = (g_raw > bank.g_min[idx]) & (g_raw < bank.g_max[idx])
        return float(np.mean(val)), (np.where(inside, grad, 0.0) * pred.y_scale / n)[:, None]
    P, J = head_params(pred.family, out, pred.y_mean, pred.y_scale)
    g, lam, free = kernel.dispatch_many(bank, idx, FAMILY_CODE[pred.family], P, pen)
    val, grad = kernel.qloss_many(bank, idx, g, y, pen)
    p = np.clip((pen.gamma1 - lam) / (pen.gamma1 + pen.gamma2), 1e-12, 1 - 1e-12)
    dq = quantile_param_grad(pred.family, P, p) * (free > 0)[:, None]
    dtheta = (grad / n)[:, None] * dq
    return float(np.mean(val)), np.einsum("nk,nkh->nh", dtheta, J)


def loss_and_grads(pred: Predictor, X, y, idx, ctx):
    out, acts = pred.mlp.forward(pred.x_norm(X), keep=True)
    loss, dout = objective(pred, out, np.asarray(y, dtype=float), idx, ctx)
    return loss, pred.mlp.backward(acts, dout)


def validation_loss(pred: Predictor, X, y, idx, ctx, chunk: int = 4096) -> float:
    total = 0.0
    for s in range(0, y.size, chunk):
        sl = slice(s, s + chunk)
        out = pred.raw(X[sl])
        loss, _ = objective(pred, out, y[sl], idx[sl], ctx)
        total += loss * (min(s + chunk, y.size) - s)
    return total / y.size


# -- training ---------------------------------------------------------------------

@dataclass
class TrainResult:
    predictor: Predictor
    history: list[float]  # validation loss at init and after each epoch
    best_epoch: int
    epochs_run: int
    seconds: float

    @property
    def best_val(self) -> float:
        return self.history[self.best_epoch]


def train(train_set: SampleSet, val_set: SampleSet, config: TrainConfig,
          ctx: DispatchContext | None = None) -> TrainResult:
    if len(train_set) == 0 or len(val_set) == 0:
        raise EmptyDataset("training and validation sets must be non-empty")
    if config.framework != "mse" and ctx is None:
        raise ConfigError(f"framework {config.framework!r} needs a dispatch context")
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    norm = Normalizer.fit(train_set.X)
    y_scale = float(train_set.y.std()) or 1.0
    mlp = Mlp.init([train_set.X.shape[1], *config.hidden, config.head_size], rng)
    pred = Predictor(mlp, config.framework, config.family, norm, float(train_set.y.mean()), y_scale)

    Xtr, ytr = norm(train_set.X), train_set.y
    ident = Normalizer(np.zeros(Xtr.shape[1]), np.ones(Xtr.shape[1]))
    work = Predictor(mlp, pred.framework, pred.family, ident, pred.y_mean, pred.y_scale)
    idx_tr = ctx.indices(train_set) if ctx is not None else np.zeros(len(train_set), dtype=np.int64)
    idx_va = ctx.indices(val_set) if ctx is not None else np.zeros(len(val_set), dtype=np.int64)
    Xva = norm(val_set.X)

    opt = Adam(mlp.params, lr=config.learning_rate)
    history = [validation_loss(work, Xva, val_set.y, idx_va, ctx)]
    best_mlp, best_epoch, wait = mlp.copy(), 0, 0
    n = ytr.size
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        for s in range(0, n, config.batch_size):
            b = perm[s:s + config.batch_size]
            out, acts = mlp.forward(Xtr[b], keep=True)
            _, dout = objective(work, out, ytr[b], idx_tr[b], ctx)
            opt.step(mlp.params, mlp.backward(acts, dout))
        v = validation_loss(work, Xva, val_set.y, idx_va, ctx)
        history.append(v)
        if v < history[best_epoch]:
            best_mlp, best_epoch, wait = mlp.copy(), epoch, 0
        else:
            wait += 1
            if wait >= config.patience:
                break
        logger.debug("%s epoch %d val %.6g", config.framework, epoch, v)
    pred.mlp = best_mlp
    return TrainResult(pred, history, best_epoch, epoch, time.perf_counter() - t0)


def train_mse(train_set, val_set, config: TrainConfig) -> Predictor:
    return train(train_set, val_set, _with(config, "mse")).predictor


def train_taskspecific(train_set, val_set, ctx: DispatchContext, config: TrainConfig) -> Predictor:
    return train(train_set, val_set, _with(config, "task_specific"), ctx).predictor


def train_modelfree(train_set, val_set, ctx: DispatchContext, config: TrainConfig) -> Predictor:
    return train(train_set, val_set, _with(config, "model_free"), ctx).predictor


def _with(config: TrainConfig, framework: str) -> TrainConfig:
    d = asdict(config)
    d["framework"] = framework
    return TrainConfig(**d)


# -- evaluation ---------------------------------------------------------------------

def evaluate(pred: Predictor, samples: SampleSet, ctx: DispatchContext) -> dict:
    if len(samples) == 0:
        raise EmptyDataset("evaluation set is empty")
    idx = ctx.indices(samples)
    point, g = pred.decide(samples.X, ctx, idx)
    return score(point, g, samples, ctx, idx)


def score(point, g, samples: SampleSet, ctx: DispatchContext, idx=None) -> dict:
    """Prediction error and mean dispatch regret, overall and per 6-hour window."""
    if idx is None:
        idx = ctx.indices(samples)
    y = samples.y
    err = (np.asarray(point) - y) ** 2
    loss, _ = kernel.qloss_many(ctx.bank, idx, ctx.bank.clamp(idx, np.asarray(g, dtype=float)), y, ctx.pen)
    hours = samples.hours
    periods = []
    for lo, hi, name in PERIODS:
        sel = (hours >= lo) & (hours < hi)
        cnt = int(sel.sum())
        periods.append({
            "period": name, "hours": [lo, hi], "count": cnt,
            "mse": float(err[sel].mean()) if cnt else float("nan"),
            "cost_loss": float(loss[sel].mean()) if cnt else float("nan"),
            "cost_loss_std": float(loss[sel].std()) if cnt else float("nan"),
        })
    return {
        "n": int(y.size),
        "mse": float(err.mean()),
        "cost_loss": float(loss.mean()),
        "cost_loss_std": float(loss.std()),
        "periods": periods,
    }
