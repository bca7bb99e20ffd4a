"""Scenario encoder and main cost network: parameters, forward/backward, weight files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..feeder import Feeder, normalized_adjacency
from ..scenario import ScenarioSet, pool_scenarios
from .layers import (GcnLayer, MlpStack, ShapeError, TemporalConvLayer, conv_backward, conv_pre, gcn_backward,
                     gcn_pre, layer_norm_backward, layer_norm_forward, mlp_backward, mlp_forward, relu)

WEIGHTS_FORMAT = "neurovvo-surrogate"
WEIGHTS_VERSION = 1
N_FEATURES = 9

PROFILES = {
    "desk": dict(gcn_hidden=(16,), temporal_channels=(8,), temporal_kernels=(4,),
                 decoder_hidden=(16, 8), main_hidden=(32, 16)),
    "full": dict(gcn_hidden=(128, 64), temporal_channels=(64,), temporal_kernels=(4,),
                  decoder_hidden=(64, 32), main_hidden=(128, 64, 32)),
}


class WeightsError(ValueError):
    pass


@dataclass
class SurrogateConfig:
    """Architecture and training hyperparameters.

    ``decoder_hidden[-1]`` is the embedding size fed to the main network.
    """

    gcn_hidden: tuple = (16,)
    temporal_channels: tuple = (8,)
    temporal_kernels: tuple = (4,)
    decoder_hidden: tuple = (16, 8)
    main_hidden: tuple = (32, 16)
    dropout: float = 0.01
    learning_rate: float = 1e-3
    batch_size: int = 64
    l1: float = 1e-4
    l2: float = 1e-5
    epochs: int = 200
    optimizer: str = "adam"
    seed: int = 0
    val_fraction: float = 0.0
    zeta_margin: float = 0.1

    def __post_init__(self):
        for name in ("gcn_hidden", "temporal_channels", "temporal_kernels", "decoder_hidden", "main_hidden"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.temporal_channels) != len(self.temporal_kernels):
            raise ValueError("temporal_channels and temporal_kernels differ in length")
        if not self.gcn_hidden or not self.decoder_hidden:
            raise ValueError("need at least one GCN layer and one decoder layer")
        if any(k < 1 for k in self.temporal_kernels):
            raise ValueError("temporal kernels must be >= 1")
        if self.optimizer not in ("adam", "adagrad"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @classmethod
    def profile(cls, name: str = "desk", **overrides) -> "SurrogateConfig":
        if name not in PROFILES:
            raise ValueError(f"unknown architecture profile {name!r}")
        return cls(**{**PROFILES[name], **overrides})

    @classmethod
    def from_json(cls, doc: dict) -> "SurrogateConfig":
        doc = dict(doc)
        base = PROFILES.get(doc.pop("profile", "desk"), {})
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown surrogate settings: {sorted(unknown)}")
        return cls(**{**base, **doc})

    def to_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def fitted_kernels(kernels, horizon: int) -> tuple:
    """Shrink kernels so the valid-convolution stack leaves at least one step."""
    out, remaining = [], horizon
    for k in kernels:
        k = max(1, min(k, remaining))
        out.append(k)
        remaining -= k - 1
    return tuple(out)


@dataclass
class SurrogateWeights:
    config: SurrogateConfig
    params: dict
    a_hat: np.ndarray
    horizon: int
    x_dim: int
    kernels: tuple
    j_min: float = 0.0
    j_max: float = 1.0
    feature_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    feature_std: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))
    zeta_lo: np.ndarray | None = None
    zeta_hi: np.ndarray | None = None
    bus_ids: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.a_hat.shape[0]

    @property
    def zeta_dim(self) -> int:
        return self.config.decoder_hidden[-1]

    @property
    def gcn(self) -> list:
        return [GcnLayer(self.params[f"gcn.{l}.W"]) for l in range(len(self.config.gcn_hidden))]

    @property
    def temporal(self) -> list:
        return [TemporalConvLayer(self.params[f"tconv.{l}.W"], self.params[f"tconv.{l}.b"])
                for l in range(len(self.kernels))]

    def _stack(self, prefix: str, n: int) -> MlpStack:
        return MlpStack([(self.params[f"{prefix}.{m}.W"], self.params[f"{prefix}.{m}.b"]) for m in range(n)])

    @property
    def decoder(self) -> MlpStack:
        return self._stack("dec", len(self.config.decoder_hidden))

    @property
    def main(self) -> MlpStack:
        return self._stack("main", len(self.config.main_hidden) + 1)

    def rescale(self, psi):
        """Normalized output to dollars."""
        return psi * (self.j_max - self.j_min) + self.j_min

    def normalize(self, cost):
        return (np.asarray(cost, dtype=float) - self.j_min) / (self.j_max - self.j_min)

    def copy(self) -> "SurrogateWeights":
        other = SurrogateWeights(**{f.name: getattr(self, f.name) for f in fields(self)})
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    # persistence

    def to_json(self) -> dict:
        def arr(a):
            a = np.asarray(a, dtype=float)
            return {"shape": list(a.shape), "data": a.ravel().tolist()}

        return {
            "format": WEIGHTS_FORMAT,
            "version": WEIGHTS_VERSION,
            "config": self.config.to_json(),
            "horizon": self.horizon,
            "x_dim": self.x_dim,
            "kernels": list(self.kernels),
            "bus_ids": list(self.bus_ids),
            "j_min": float(self.j_min),
            "j_max": float(self.j_max),
            "adjacency": arr(self.a_hat),
            "feature_mean": arr(self.feature_mean),
            "feature_std": arr(self.feature_std),
            "zeta_lo": None if self.zeta_lo is None else arr(self.zeta_lo),
            "zeta_hi": None if self.zeta_hi is None else arr(self.zeta_hi),
            "params": {k: arr(self.params[k]) for k in sorted(self.params)},
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SurrogateWeights":
        if doc.get("format") != WEIGHTS_FORMAT:
            raise WeightsError("not a surrogate weight file")
        if doc.get("version") != WEIGHTS_VERSION:
            raise WeightsError(f"unsupported weight file version {doc.get('version')}")

        def arr(d):
            if d is None:
                return None
            data = np.asarray(d["data"], dtype=float)
            if data.size != int(np.prod(d["shape"])):
                raise WeightsError(f"array data of length {data.size} does not fit shape {d['shape']}")
            return data.reshape(d["shape"])

        w = cls(config=SurrogateConfig.from_json(doc["config"]),
                params={k: arr(v) for k, v in doc["params"].items()},
                a_hat=arr(doc["adjacency"]), horizon=int(doc["horizon"]), x_dim=int(doc["x_dim"]),
                kernels=tuple(doc["kernels"]), j_min=float(doc["j_min"]), j_max=float(doc["j_max"]),
                feature_mean=arr(doc["feature_mean"]), feature_std=arr(doc["feature_std"]),
                zeta_lo=arr(doc.get("zeta_lo")), zeta_hi=arr(doc.get("zeta_hi")),
                bus_ids=list(doc.get("bus_ids", [])), meta=dict(doc.get("meta", {})))
        check_shapes(w)
        if not w.j_max > w.j_min:
            raise WeightsError("j_max must exceed j_min")
        return w

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), separators=(",", ":")) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "SurrogateWeights":
        return cls.from_json(json.loads(Path(path).read_text()))


def _shapes(config: SurrogateConfig, n: int, horizon: int, x_dim: int, kernels) -> dict:
    shapes = {}
    d = N_FEATURES
    for l, h in enumerate(config.gcn_hidden):
        shapes[f"gcn.{l}.W"] = (d, h)
        d = h
    shapes["ln.gamma"] = (d,)
    shapes["ln.beta"] = (d,)
    shapes["pos"] = (horizon, d)
    t = horizon
    for l, (k, c) in enumerate(zip(kernels, config.temporal_channels)):
        shapes[f"tconv.{l}.W"] = (k, d, c)
        shapes[f"tconv.{l}.b"] = (c,)
        d, t = c, t - k + 1
    width = n * t * d
    for m, h in enumerate(config.decoder_hidden):
        shapes[f"dec.{m}.W"] = (h, width)
        shapes[f"dec.{m}.b"] = (h,)
        width = h
    width = x_dim + config.decoder_hidden[-1]
    for m, h in enumerate(tuple(config.main_hidden) + (1,)):
        shapes[f"main.{m}.W"] = (h, width)
        shapes[f"main.{m}.b"] = (h,)
        width = h
    return shapes


def check_shapes(w: SurrogateWeights) -> None:
    want = _shapes(w.config, w.n_nodes, w.horizon, w.x_dim, w.kernels)
    if set(want) != set(w.params):
        raise WeightsError(f"parameter names differ from architecture: {sorted(set(want) ^ set(w.params))}")
    for k, shape in want.items():
        if w.params[k].shape != tuple(shape):
            raise WeightsError(f"{k}: shape {w.params[k].shape}, expected {tuple(shape)}")
        if not np.all(np.isfinite(w.params[k])):
            raise WeightsError(f"{k}: non-finite entries")


def init_weights(feeder: Feeder, horizon: int, x_dim: int, config: SurrogateConfig | None = None,
                 seed: int | None = None) -> SurrogateWeights:
    """He-initialized weights for a feeder graph, horizon and first-stage size."""
    config = config or SurrogateConfig()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    kernels = fitted_kernels(config.temporal_kernels, horizon)
    params = {}
    for name, shape in _shapes(config, feeder.n_buses, horizon, x_dim, kernels).items():
        if name == "ln.gamma":
            params[name] = np.ones(shape)
        elif name.endswith(".b") or name in ("ln.beta", "pos"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1])) if name.startswith(("gcn", "tconv")) else shape[1]
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return SurrogateWeights(config, params, normalized_adjacency(feeder), horizon, x_dim, kernels,
                            bus_ids=[b.id for b in feeder.buses], meta={"feeder": feeder.name})


def check_feeder(w: SurrogateWeights, feeder: Feeder) -> None:
    a_hat = normalized_adjacency(feeder)
    if a_hat.shape != w.a_hat.shape or not np.allclose(a_hat, w.a_hat, rtol=0, atol=1e-12):
        raise ShapeError(f"weights were trained on a {w.n_nodes}-bus graph that differs from feeder {feeder.name}")


def pooled_features(scenarios: ScenarioSet) -> np.ndarray:
    return pool_scenarios(scenarios)


# forward / backward


def forward(w: SurrogateWeights, feats: np.ndarray, x: np.ndarray, train: bool = False,
            rng: np.random.Generator | None = None):
    """Normalized cost ``psi`` for a batch.

    ``feats`` is ``(B, N, T, 9)`` pooled scenario features and ``x`` is
    ``(B, x_dim)``. Returns ``(psi, cache)``; ``cache`` feeds :func:`backward`.
    """
    feats = np.asarray(feats, dtype=float)
    x = np.asarray(x, dtype=float)
    if feats.ndim != 4 or feats.shape[1:] != (w.n_nodes, w.horizon, N_FEATURES):
        raise ShapeError(f"features {feats.shape}, expected (B, {w.n_nodes}, {w.horizon}, {N_FEATURES})")
    if x.shape != (feats.shape[0], w.x_dim):
        raise ShapeError(f"first-stage batch {x.shape}, expected ({feats.shape[0]}, {w.x_dim})")
    zeta, enc = _encode(w, feats, train, rng)
    p = w.config.dropout if train else 0.0
    out, main_cache = mlp_forward(w.main.layers, np.concatenate([x, zeta], axis=1), p, rng)
    return out[:, 0], {"enc": enc, "main": main_cache}


def _encode(w: SurrogateWeights, feats, train=False, rng=None):
    cache = {}
    h = ((feats - w.feature_mean) / w.feature_std).transpose(0, 2, 1, 3)  # (B, T, N, F)
    gcn = []
    for layer in w.gcn:
        pre, agg = gcn_pre(w.a_hat, h, layer.W)
        gcn.append((agg, pre))
        h = relu(pre)
    cache["gcn"] = gcn
    y, ln = layer_norm_forward(h, w.params["ln.gamma"], w.params["ln.beta"])
    cache["ln"] = ln
    z = y.transpose(0, 2, 1, 3) + w.params["pos"]  # (B, N, T, d)
    conv = []
    for layer in w.temporal:
        pre, cols = conv_pre(z, layer.W, layer.b)
        conv.append((cols, pre, z.shape[-2]))
        z = relu(pre)
    cache["conv"] = conv
    cache["flat_shape"] = z.shape
    p = w.config.dropout if train else 0.0
    zeta, dec = mlp_forward(w.decoder.layers, z.reshape(z.shape[0], -1), p, rng)
    cache["dec"] = dec
    return zeta, cache


def backward(w: SurrogateWeights, cache, dpsi: np.ndarray) -> dict:
    """Gradients of ``sum(dpsi * psi)`` wrt every parameter."""
    grads = {}
    dpsi = np.asarray(dpsi, dtype=float).reshape(-1, 1)
    main_grads, din = mlp_backward(w.main.layers, cache["main"], dpsi)
    for m, (dW, db) in enumerate(main_grads):
        grads[f"main.{m}.W"], grads[f"main.{m}.b"] = dW, db
    dzeta = din[:, w.x_dim:]
    enc = cache["enc"]
    dec_grads, dflat = mlp_backward(w.decoder.layers, enc["dec"], dzeta)
    for m, (dW, db) in enumerate(dec_grads):
        grads[f"dec.{m}.W"], grads[f"dec.{m}.b"] = dW, db
    dz = dflat.reshape(enc["flat_shape"])
    for l in range(len(w.kernels) - 1, -1, -1):
        cols, pre, t_in = enc["conv"][l]
        dpre = dz * (pre > 0)
        dW, db, dz = conv_backward(cols, w.params[f"tconv.{l}.W"], dpre, t_in)
        grads[f"tconv.{l}.W"], grads[f"tconv.{l}.b"] = dW, db
    grads["pos"] = dz.sum(axis=0).sum(axis=0)
    dy = dz.transpose(0, 2, 1, 3)
    dh, grads["ln.gamma"], grads["ln.beta"] = layer_norm_backward(dy, enc["ln"], w.params["ln.gamma"])
    for l in range(len(w.config.gcn_hidden) - 1, -1, -1):
        agg, pre = enc["gcn"][l]
        dW, dh = gcn_backward(w.a_hat, agg, w.params[f"gcn.{l}.W"], dh * (pre > 0))
        grads[f"gcn.{l}.W"] = dW
    return grads


def relu_preactivations(cache) -> list:
    """Every pre-activation that passes through a ReLU (for kink checks)."""
    out = [pre for _, pre in cache["enc"]["gcn"]]
    out += [pre for _, pre, _ in cache["enc"]["conv"]]
    out += [pre for _, pre, _ in cache["enc"]["dec"][:-1]]
    out += [pre for _, pre, _ in cache["main"][:-1]]
    return out


# public evaluation API


def encode_pooled(w: SurrogateWeights, feats: np.ndarray) -> np.ndarray:
    """Embeddings for a batch of pooled features ``(B, N, T, 9)``."""
    feats = np.asarray(feats, dtype=float)
    if feats.ndim == 3:
        return encode_pooled(w, feats[None])[0]
    if feats.shape[1:] != (w.n_nodes, w.horizon, N_FEATURES):
        raise ShapeError(f"features {feats.shape}, expected (B, {w.n_nodes}, {w.horizon}, {N_FEATURES})")
    return _encode(w, feats)[0]


def encoder_forward(w: SurrogateWeights, feeder: Feeder, scenarios: ScenarioSet) -> np.ndarray:
    """Scenario-set embedding ``zeta`` (independent of scenario order)."""
    check_feeder(w, feeder)
    if scenarios.horizon != w.horizon:
        raise ShapeError(f"scenario horizon {scenarios.horizon}, weights expect {w.horizon}")
    return encode_pooled(w, pooled_features(scenarios))


def main_forward(main, x_flat, zeta) -> float:
    """Normalized cost of first-stage vector ``x_flat`` under embedding ``zeta``."""
    if isinstance(main, SurrogateWeights):
        main = main.main
    elif not isinstance(main, MlpStack):
        main = MlpStack(list(main))
    h = np.concatenate([np.asarray(x_flat, dtype=float).ravel(), np.asarray(zeta, dtype=float).ravel()])
    if h.size != main.in_dim:
        raise ShapeError(f"main network expects {main.in_dim} inputs, got {h.size}")
    out = main(h)
    if out.shape != (1,):
        raise ShapeError("main network must end in a single output")
    return float(out[0])


def predict_cost(w: SurrogateWeights, feeder: Feeder, scenarios: ScenarioSet, x_flat) -> float:
    """Dollar estimate of the expected recourse cost."""
    return float(w.rescale(main_forward(w, x_flat, encoder_forward(w, feeder, scenarios))))
