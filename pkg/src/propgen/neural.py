"""Minimal neural-network substrate shared by the learned models.

Dense layers with relu/tanh/identity activations, inverted dropout, explicit
reverse-mode gradients, Adam, Gaussian reparameterization, central
finite-difference gradient checking, and a binary model container with a
text header and little-endian float64 weight blocks (bit-exact roundtrip).

Everything runs in double precision on numpy. Networks here are small
enough that reproducibility and gradient-check fidelity matter more than
speed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")

_MAGIC = "PROPGEN-MODEL v1"


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activate_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # derivative w.r.t. pre-activation, expressed via z or the activation a
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass
class Mlp:
    """Fully connected network. weights[i] has shape (fan_in, fan_out).

    activations and dropout are per layer; dropout is applied to the
    layer's output activation, inverted style (scaling at train time,
    no-op at inference).
    """

    sizes: list
    activations: list
    dropout: list
    weights: list = field(repr=False)
    biases: list = field(repr=False)

    @classmethod
    def create(cls, sizes, activations, rng, dropout=None) -> "Mlp":
        sizes = [int(s) for s in sizes]
        activations = list(activations)
        n_layers = len(sizes) - 1
        if len(activations) != n_layers:
            raise ValueError("need one activation per layer")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if dropout is None:
            dropout = [0.0] * n_layers
        dropout = [float(d) for d in dropout]
        if len(dropout) != n_layers:
            raise ValueError("need one dropout rate per layer")
        if any(not (0.0 <= d < 1.0) for d in dropout):
            raise ValueError("dropout rates must lie in [0, 1)")

        weights, biases = [], []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            if act == "relu":
                scale = np.sqrt(2.0 / fan_in)  # He
            else:
                scale = np.sqrt(2.0 / (fan_in + fan_out))  # Glorot
            weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(sizes, activations, dropout, weights, biases)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list:
        """Flat parameter list [W0, b0, W1, b1, ...] (live array views)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def forward(net: Mlp, x: np.ndarray, train: bool = False, rng=None):
    """Run the network on a batch (n, d_in).

    Returns (y, cache); cache is None in inference mode. Train mode applies
    inverted dropout and needs an rng whenever any rate is nonzero.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != net.sizes[0]:
        raise ValueError(f"expected input size {net.sizes[0]}, got {x.shape[1]}")

    if not train:
        a = x
        for w, b, act in zip(net.weights, net.biases, net.activations):
            a = _activate(act, a @ w + b)
        return (a[0] if squeeze else a), None

    if any(d > 0.0 for d in net.dropout) and rng is None:
        raise ValueError("train-mode forward with dropout requires an rng")

    a = x
    pre, post, masks = [], [], []
    for w, b, act, rate in zip(net.weights, net.biases, net.activations, net.dropout):
        z = a @ w + b
        a = _activate(act, z)
        if rate > 0.0:
            mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
            a = a * mask
        else:
            mask = None
        pre.append(z)
        post.append(a)
        masks.append(mask)
    cache = {"x": x, "pre": pre, "post": post, "masks": masks, "squeeze": squeeze}
    return (a[0] if squeeze else a), cache


def backward(net: Mlp, cache: dict, grad_out: np.ndarray):
    """Backpropagate grad_out (dL/dy) through a cached train-mode forward.

    Returns (param_grads, input_grad) with param_grads ordered like
    net.parameters().
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if cache["squeeze"] and g.ndim == 1:
        g = g[None, :]
    grads_w = [None] * net.n_layers
    grads_b = [None] * net.n_layers
    for i in range(net.n_layers - 1, -1, -1):
        z = cache["pre"][i]
        mask = cache["masks"][i]
        a_in = cache["x"] if i == 0 else cache["post"][i - 1]
        if mask is not None:
            g = g * mask
        # activation value before dropout, for the tanh derivative
        act_val = _activate(net.activations[i], z)
        g = g * _activate_grad(net.activations[i], z, act_val)
        grads_w[i] = a_in.T @ g
        grads_b[i] = g.sum(axis=0)
        g = g @ net.weights[i].T
    param_grads = []
    for gw, gb in zip(grads_w, grads_b):
        param_grads.append(gw)
        param_grads.append(gb)
    input_grad = g[0] if cache["squeeze"] else g
    return param_grads, input_grad


def mse_loss_and_grad(net: Mlp, batch_x, batch_y, rng=None, train: bool = True):
    """Mean-over-samples squared L2 loss and its parameter gradients.

    loss = (1/N) sum_i ||net(x_i) - y_i||^2 (sum over output dims).
    """
    x = np.atleast_2d(np.asarray(batch_x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(batch_y, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[0] != y.shape[0]:
        raise ValueError("batch_x and batch_y disagree on batch size")
    pred, cache = forward(net, x, train=train, rng=rng)
    err = pred - y
    loss = float(np.mean(np.sum(err * err, axis=1)))
    grad_pred = 2.0 * err / x.shape[0]
    param_grads, _ = backward(net, cache, grad_pred)
    return loss, param_grads


@dataclass
class AdamState:
    """Adam with bias correction; moments mirror the parameter list."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = None
    v: list = None

    def _ensure(self, params):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads) -> None:
    """One in-place Adam update of params given matching grads."""
    state._ensure(params)
    if len(params) != len(state.m) or len(params) != len(grads):
        raise ValueError("parameter/gradient lists disagree with optimizer state")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def reparameterize(mu: np.ndarray, logvar: np.ndarray, rng):
    """Sample z = mu + sigma * eps with eps ~ N(0, I). Returns (z, eps)."""
    eps = rng.standard_normal(mu.shape)
    z = mu + np.exp(0.5 * logvar) * eps
    return z, eps


def minibatch_indices(n: int, batch_size: int, rng) -> Iterator[np.ndarray]:
    """Shuffled minibatch index arrays covering range(n) once."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def finite_difference_gradients(
    loss_fn: Callable[[], float], arrays: Sequence[np.ndarray], h: float = 1e-5
) -> list:
    """Central finite-difference gradients of loss_fn w.r.t. arrays in place.

    loss_fn takes no arguments and must depend on the arrays' current
    contents. Intended for gradient verification on tiny configurations;
    cost is two loss evaluations per scalar parameter.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = loss_fn()
            flat[k] = orig - h
            down = loss_fn()
            flat[k] = orig
            gflat[k] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic: Sequence[np.ndarray], numeric) -> float:
    """max |a - n| / max(1, |a|, |n|) over all parameters, for grad checks."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def save_arrays(path, header: dict, arrays: dict) -> None:
    """Write a model container: magic line, JSON header, raw float64 blocks.

    The header is augmented with the array names and shapes in write order;
    every array is stored little-endian float64, so loading is bit-exact.
    """
    names = list(arrays.keys())
    meta = dict(header)
    meta["arrays"] = [
        {"name": name, "shape": list(np.asarray(arrays[name]).shape)}
        for name in names
    ]
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":"))
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC.encode("ascii") + b"\n")
        fh.write(blob.encode("utf-8") + b"\n")
        fh.write(b"BINARY\n")
        for name in names:
            arr = np.ascontiguousarray(np.asarray(arrays[name], dtype=np.float64))
            fh.write(arr.astype("<f8", copy=False).tobytes())


def load_arrays(path):
    """Inverse of save_arrays. Returns (header, {name: array})."""
    with Path(path).open("rb") as fh:
        magic = fh.readline().rstrip(b"\n").decode("ascii", errors="replace")
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a model file (magic {magic!r})")
        header = json.loads(fh.readline().decode("utf-8"))
        marker = fh.readline()
        if marker != b"BINARY\n":
            raise ValueError(f"{path}: missing binary marker")
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError(f"{path}: truncated block for {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return header, arrays


def mlp_to_arrays(prefix: str, net: Mlp, arrays: dict) -> dict:
    """Append a network's weight blocks to an array dict; returns its config."""
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"{prefix}.w{i}"] = w
        arrays[f"{prefix}.b{i}"] = b
    return {
        "sizes": list(net.sizes),
        "activations": list(net.activations),
        "dropout": list(net.dropout),
    }


def mlp_from_arrays(prefix: str, config: dict, arrays: dict) -> Mlp:
    sizes = list(config["sizes"])
    weights = [arrays[f"{prefix}.w{i}"] for i in range(len(sizes) - 1)]
    biases = [arrays[f"{prefix}.b{i}"] for i in range(len(sizes) - 1)]
    return Mlp(
        sizes=sizes,
        activations=list(config["activations"]),
        dropout=[float(d) for d in config["dropout"]],
        weights=weights,
        biases=biases,
    )
