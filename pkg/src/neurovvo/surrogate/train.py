"""Training loop and finite-difference gradient check for the surrogate."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..feeder import Feeder
from ..scenario import ScenarioSet
from ..vvo.decision import FirstStageDecision
from .network import (SurrogateConfig, SurrogateWeights, backward, encode_pooled, forward, init_weights,
                      pooled_features, relu_preactivations)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class KinkError(ValueError):
    """A ReLU pre-activation sits too close to zero for a finite-difference check."""


@dataclass
class TrainingData:
    """Pooled features ``(M, N, T, 9)``, first-stage vectors ``(M, x_dim)`` and dollar labels ``(M,)``."""

    features: np.ndarray
    x: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        m = len(self.labels)
        if m == 0:
            raise ValueError("empty training set")
        if self.features.ndim != 4 or len(self.features) != m or len(self.x) != m:
            raise ValueError("features, x and labels disagree in length")
        if not np.all(np.isfinite(self.labels)):
            raise ValueError("training labels must be finite")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "TrainingData":
        idx = np.asarray(idx)
        return TrainingData(self.features[idx], self.x[idx], self.labels[idx])

    @classmethod
    def from_samples(cls, feeder: Feeder, samples) -> "TrainingData":
        """From ``(ScenarioSet, x, cost)`` triples; ``x`` may be a decision or a flat vector."""
        feats, xs, ys = [], [], []
        for scenarios, x, cost in samples:
            if not isinstance(scenarios, ScenarioSet):
                raise TypeError("samples must hold ScenarioSet objects")
            feats.append(pooled_features(scenarios))
            xs.append(x.to_flat(feeder) if isinstance(x, FirstStageDecision) else np.asarray(x, dtype=float))
            ys.append(float(cost))
        return cls(np.stack(feats), np.stack(xs), np.array(ys))


@dataclass
class TrainingHistory:
    """Per-epoch curves.

    ``loss`` is the penalized objective on the whole training set with
    dropout off, evaluated after each epoch; ``batch_loss`` is the mean of
    the minibatch objectives seen during the epoch (dropout on).
    """

    loss: list = field(default_factory=list)
    batch_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1

    def moving_average(self, window: int = 50) -> np.ndarray:
        a = np.asarray(self.loss)
        if a.size < window:
            return a.copy()
        c = np.cumsum(np.insert(a, 0, 0.0))
        return (c[window:] - c[:-window]) / window


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in sorted(grads):
            g = grads[k]
            m = self.m[k] = self.b1 * self.m.get(k, 0.0) + (1 - self.b1) * g
            v = self.v[k] = self.b2 * self.v.get(k, 0.0) + (1 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class Adagrad:
    def __init__(self, lr: float, eps: float = 1e-10):
        self.lr, self.eps, self.g2 = lr, eps, {}

    def step(self, params: dict, grads: dict) -> None:
        for k in sorted(grads):
            g = grads[k]
            acc = self.g2[k] = self.g2.get(k, 0.0) + g * g
            params[k] -= self.lr * g / (np.sqrt(acc) + self.eps)


def _penalized(name: str) -> bool:
    return name.endswith(".W")


def penalty(params: dict, l1: float, l2: float) -> float:
    return float(sum(l1 * np.abs(v).sum() + l2 * (v * v).sum() for k, v in params.items() if _penalized(k)))


def _mse(w: SurrogateWeights, data: TrainingData, y: np.ndarray, batch: int = 512) -> float:
    err = 0.0
    for s in range(0, len(data), batch):
        psi, _ = forward(w, data.features[s:s + batch], data.x[s:s + batch])
        err += float(np.sum((psi - y[s:s + batch]) ** 2))
    return err / len(data)


def _diverged(hist, params, config, epoch, batch, what):
    finite = [float(np.max(np.abs(v[np.isfinite(v)]))) for v in params.values() if np.isfinite(v).any()]
    bad = sorted(k for k, v in params.items() if not np.all(np.isfinite(v)))
    raise TrainingError(f"non-finite {what} at epoch {epoch}, batch {batch}; "
                        f"last epoch loss {hist.loss[-1] if hist.loss else 'n/a'}, "
                        f"largest finite |parameter| {max(finite, default=float('nan')):.3g}, "
                        f"non-finite parameters {bad[:5]}, learning rate {config.learning_rate}")


def train(data, config: SurrogateConfig | None = None, feeder: Feeder | None = None,
          weights: SurrogateWeights | None = None, callback=None):
    """Fit encoder and main network to normalized recourse-cost labels.

    ``data`` is a :class:`TrainingData` or a list of ``(ScenarioSet, x, cost)``
    triples (then ``feeder`` is required). The loss is the mean squared error
    of ``psi`` against labels scaled to ``[0, 1]`` by the label range, plus L1
    and L2 penalties on weight matrices. Returns ``(weights, history)``.
    """
    config = config or SurrogateConfig()
    if not isinstance(data, TrainingData):
        if feeder is None:
            raise ValueError("a feeder is needed to pool raw scenario samples")
        data = TrainingData.from_samples(feeder, data)
    rng = np.random.default_rng(config.seed)
    if weights is None:
        if feeder is None:
            raise ValueError("a feeder is needed to initialize weights")
        weights = init_weights(feeder, data.features.shape[2], data.x.shape[1], config)
    else:
        weights = weights.copy()
        weights.config = config

    j_min, j_max = float(data.labels.min()), float(data.labels.max())
    if j_max - j_min < 1e-9 * max(1.0, abs(j_min)):
        # constant labels: any span is valid, a tiny one makes J(psi) ~ j_min for every psi
        j_max = j_min + 1e-6 * max(1.0, abs(j_min))
    weights.j_min, weights.j_max = j_min, j_max
    flat = data.features.reshape(-1, data.features.shape[-1])
    weights.feature_mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    weights.feature_std = np.where(std > 1e-12, std, 1.0)
    y_all = weights.normalize(data.labels)

    m = len(data)
    n_val = int(round(m * config.val_fraction)) if m >= 10 else 0
    order = rng.permutation(m)
    val_idx, tr_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
    tr, y_tr = data.subset(tr_idx), y_all[tr_idx]
    val, y_val = (data.subset(val_idx), y_all[val_idx]) if n_val else (None, None)

    opt = Adam(config.learning_rate) if config.optimizer == "adam" else Adagrad(config.learning_rate)
    hist = TrainingHistory()
    best, best_val = None, np.inf
    params = weights.params
    for epoch in range(config.epochs):
        perm = rng.permutation(len(tr))
        total, count = 0.0, 0
        for s in range(0, len(tr), config.batch_size):
            idx = perm[s:s + config.batch_size]
            psi, cache = forward(weights, tr.features[idx], tr.x[idx], train=True, rng=rng)
            err = psi - y_tr[idx]
            loss = float(np.mean(err ** 2)) + penalty(params, config.l1, config.l2)
            if not np.isfinite(loss):
                _diverged(hist, params, config, epoch, s // config.batch_size, "loss")
            grads = backward(weights, cache, 2.0 * err / len(idx))
            for k in grads:
                if _penalized(k):
                    grads[k] = grads[k] + config.l1 * np.sign(params[k]) + 2.0 * config.l2 * params[k]
            with np.errstate(over="ignore", invalid="ignore"):
                opt.step(params, grads)
            if not all(np.all(np.isfinite(v)) for v in params.values()):
                _diverged(hist, params, config, epoch, s // config.batch_size, "parameter update")
            total += loss * len(idx)
            count += len(idx)
        hist.batch_loss.append(total / count)
        hist.loss.append(_mse(weights, tr, y_tr) + penalty(params, config.l1, config.l2))
        if val is not None:
            v = _mse(weights, val, y_val)
            hist.val_loss.append(v)
            if v < best_val:
                best_val, best = v, {k: a.copy() for k, a in params.items()}
                hist.best_epoch = epoch
        if callback is not None:
            callback(epoch, hist)
    if best is not None:
        weights.params = best
    else:
        hist.best_epoch = config.epochs - 1

    zeta = encode_pooled(weights, data.features)
    lo, hi = zeta.min(axis=0), zeta.max(axis=0)
    pad = config.zeta_margin * (hi - lo) + 1e-6
    weights.zeta_lo, weights.zeta_hi = lo - pad, hi + pad
    weights.meta.update({"n_samples": m, "n_validation": n_val, "epochs": config.epochs,
                         "final_loss": hist.loss[-1] if hist.loss else None, "best_epoch": hist.best_epoch})
    return weights, hist


@dataclass
class GradCheckResult:
    max_error: float
    per_parameter: dict

    def group_max(self) -> dict:
        out = {}
        for k, v in self.per_parameter.items():
            g = k.split(".")[0]
            g = {"ln": "gcn", "pos": "temporal", "tconv": "temporal", "dec": "decoder"}.get(g, g)
            out[g] = max(out.get(g, 0.0), v)
        return out


def grad_check(weights: SurrogateWeights, sample, step: float = 1e-5, margin: float = 1e-4,
               names=None, max_entries: int | None = None, seed: int = 0) -> GradCheckResult:
    """Compare backprop against central differences of ``0.5 (psi - y)^2``.

    ``sample`` is ``(features (N, T, 9), x_flat[, y])``. Raises
    :class:`KinkError` if any ReLU input lies within ``margin`` of zero.
    The error per entry is ``|analytic - numeric| / (|analytic| + 1e-8)``.
    """
    feats = np.asarray(sample[0], dtype=float)[None]
    x = np.asarray(sample[1], dtype=float)[None]
    y = float(sample[2]) if len(sample) > 2 else 0.0
    w = weights.copy()

    def loss():
        psi, _ = forward(w, feats, x)
        return 0.5 * float((psi[0] - y) ** 2)

    psi, cache = forward(w, feats, x)
    if any(np.min(np.abs(p)) < margin for p in relu_preactivations(cache) if p.size):
        raise KinkError(f"a ReLU input lies within {margin} of zero")
    grads = backward(w, cache, np.array([psi[0] - y]))
    rng = np.random.default_rng(seed)
    errors = {}
    for name in sorted(names or w.params):
        p = w.params[name]
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        worst = 0.0
        for i in idx:
            keep = flat[i]
            flat[i] = keep + step
            up = loss()
            flat[i] = keep - step
            down = loss()
            flat[i] = keep
            num = (up - down) / (2 * step)
            ana = grads[name].reshape(-1)[i]
            worst = max(worst, abs(ana - num) / (abs(ana) + 1e-8))
        errors[name] = worst
    return GradCheckResult(max(errors.values()) if errors else 0.0, errors)
