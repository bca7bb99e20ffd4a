"""Forward and backward passes of the network building blocks.

All functions work on batched arrays; the leading axes are free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LN_EPS = 1e-5


class ShapeError(ValueError):
    pass


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def normalize_adjacency(a_tilde: np.ndarray, d_tilde: np.ndarray) -> np.ndarray:
    """``D^-1/2 A D^-1/2`` for a self-looped adjacency and its degree matrix."""
    deg = np.diag(d_tilde) if d_tilde.ndim == 2 else np.asarray(d_tilde)
    if a_tilde.shape != (deg.size, deg.size):
        raise ShapeError(f"adjacency {a_tilde.shape} does not match degree vector of length {deg.size}")
    inv = 1.0 / np.sqrt(deg)
    return inv[:, None] * a_tilde * inv[None, :]


@dataclass
class GcnLayer:
    W: np.ndarray  # (F_in, d)


@dataclass
class TemporalConvLayer:
    W: np.ndarray  # (k, d_in, d_out)
    b: np.ndarray

    @property
    def kernel(self) -> int:
        return self.W.shape[0]


@dataclass
class MlpStack:
    """Dense layers ``h <- W h + b``; ReLU on hidden layers, linear output."""

    layers: list

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    def __call__(self, h: np.ndarray) -> np.ndarray:
        return mlp_forward(self.layers, h)[0]


def gcn_forward(layer: GcnLayer, a_tilde: np.ndarray, d_tilde: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``relu(D^-1/2 A D^-1/2 xi W)`` for node features ``xi`` of shape ``(..., N, F)``."""
    a_hat = normalize_adjacency(a_tilde, d_tilde)
    if xi.shape[-2] != a_hat.shape[0] or xi.shape[-1] != layer.W.shape[0]:
        raise ShapeError(f"features {xi.shape} incompatible with graph {a_hat.shape} and W {layer.W.shape}")
    return relu(gcn_pre(a_hat, xi, layer.W)[0])


def gcn_pre(a_hat: np.ndarray, h: np.ndarray, W: np.ndarray):
    """Pre-activation ``A_hat h W`` and the aggregated input ``A_hat h``."""
    agg = a_hat @ h
    return agg @ W, agg


def gcn_backward(a_hat: np.ndarray, agg: np.ndarray, W: np.ndarray, dpre: np.ndarray):
    """Gradients wrt ``W`` and the layer input, given ``d loss / d pre``."""
    f_in, d = W.shape
    dW = agg.reshape(-1, f_in).T @ dpre.reshape(-1, d)
    dh = a_hat.T @ (dpre @ W.T)
    return dW, dh


def layer_norm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return xhat * gamma + beta, (xhat, inv)


def layer_norm_backward(dy: np.ndarray, cache, gamma: np.ndarray):
    xhat, inv = cache
    d = xhat.shape[-1]
    dgamma = (dy * xhat).reshape(-1, d).sum(axis=0)
    dbeta = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * gamma
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def _windows(z: np.ndarray, k: int) -> np.ndarray:
    """Stack ``k`` shifted copies along features: ``(..., T, d) -> (..., T-k+1, k*d)``."""
    t_out = z.shape[-2] - k + 1
    return np.concatenate([z[..., j:j + t_out, :] for j in range(k)], axis=-1)


def conv_pre(z: np.ndarray, W: np.ndarray, b: np.ndarray):
    k, d_in, d_out = W.shape
    if z.shape[-1] != d_in:
        raise ShapeError(f"temporal input has {z.shape[-1]} channels, kernel expects {d_in}")
    if z.shape[-2] < k:
        raise ShapeError(f"sequence of length {z.shape[-2]} shorter than kernel {k}")
    cols = _windows(z, k)
    return cols @ W.reshape(k * d_in, d_out) + b, cols


def conv_backward(cols: np.ndarray, W: np.ndarray, dpre: np.ndarray, t_in: int):
    k, d_in, d_out = W.shape
    Wm = W.reshape(k * d_in, d_out)
    dW = (cols.reshape(-1, k * d_in).T @ dpre.reshape(-1, d_out)).reshape(W.shape)
    db = dpre.reshape(-1, d_out).sum(axis=0)
    dcols = dpre @ Wm.T
    t_out = dpre.shape[-2]
    dz = np.zeros(dpre.shape[:-2] + (t_in, d_in))
    for j in range(k):
        dz[..., j:j + t_out, :] += dcols[..., j * d_in:(j + 1) * d_in]
    return dW, db, dz


def temporal_forward(layers, z0: np.ndarray) -> np.ndarray:
    """Valid 1-D convolutions with ReLU along the time axis of ``(..., T, d)``."""
    need = sum(layer.kernel - 1 for layer in layers) + 1
    if z0.shape[-2] < need:
        raise ShapeError(f"horizon {z0.shape[-2]} too short for kernel stack (needs {need})")
    z = z0
    for layer in layers:
        z = relu(conv_pre(z, layer.W, layer.b)[0])
    return z


def mlp_forward(layers, h: np.ndarray, dropout: float = 0.0, rng: np.random.Generator | None = None):
    """Returns the output and a cache for :func:`mlp_backward`.

    Inverted dropout is applied after each hidden activation when ``dropout > 0``.
    """
    cache = []
    for m, (W, b) in enumerate(layers):
        if h.shape[-1] != W.shape[1]:
            raise ShapeError(f"layer {m} expects {W.shape[1]} inputs, got {h.shape[-1]}")
        pre = h @ W.T + b
        last = m == len(layers) - 1
        mask = None
        if last:
            out = pre
        else:
            out = relu(pre)
            if dropout > 0.0 and rng is not None:
                mask = (rng.random(out.shape) >= dropout) / (1.0 - dropout)
                out = out * mask
        cache.append((h, pre, mask))
        h = out
    return h, cache


def mlp_backward(layers, cache, dout: np.ndarray):
    grads = []
    for m in range(len(layers) - 1, -1, -1):
        W, _ = layers[m]
        h, pre, mask = cache[m]
        if m != len(layers) - 1:
            if mask is not None:
                dout = dout * mask
            dout = dout * (pre > 0)
        dW = dout.reshape(-1, W.shape[0]).T @ h.reshape(-1, W.shape[1])
        db = dout.reshape(-1, W.shape[0]).sum(axis=0)
        grads.append((dW, db))
        dout = dout @ W
    grads.reverse()
    return grads, dout
