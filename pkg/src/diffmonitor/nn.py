"""Dense networks with hand-written backprop, Adam, and gradient checking.

Everything runs in float64. Inputs are batches ``[batch, features]``; a 1-D
input is treated as a batch of one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np

CHECKPOINT_VERSION = 1

Activation = Literal["relu", "identity"]


@dataclass
class Layer:
    weights: np.ndarray  # [fan_in, fan_out]
    biases: np.ndarray   # [fan_out]
    activation: Activation = "relu"


@dataclass
class Cache:
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    version: int
    squeeze: bool


class DenseNet:
    """Stack of affine layers, each followed by ReLU or identity."""

    def __init__(self, sizes: Sequence[int], activations: Sequence[Activation] | None = None,
                 seed: int = 0, zero_last: bool = False):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if activations is None:
            activations = ["relu"] * (len(sizes) - 2) + ["identity"]
        if len(activations) != len(sizes) - 1:
            raise ValueError("one activation per layer required")
        rng = np.random.default_rng(seed)
        self.layers: list[Layer] = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            if act not in ("relu", "identity"):
                raise ValueError(f"unknown activation {act!r}")
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.layers.append(Layer(w, np.zeros(fan_out), act))
        if zero_last:
            self.layers[-1].weights[:] = 0.0
        self.seed = seed
        self.version = 0

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].weights.shape[0]] + [l.weights.shape[1] for l in self.layers]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.biases))
        return out

    def touch(self) -> None:
        """Mark parameters as modified; outstanding caches become stale."""
        self.version += 1

    def copy(self) -> "DenseNet":
        clone = DenseNet.__new__(DenseNet)
        clone.layers = [Layer(l.weights.copy(), l.biases.copy(), l.activation) for l in self.layers]
        clone.seed = self.seed
        clone.version = 0
        return clone

    def load_parameters(self, params: Sequence[np.ndarray]) -> None:
        mine = self.parameters()
        if len(params) != len(mine):
            raise ValueError("parameter count mismatch")
        for dst, src in zip(mine, params):
            if dst.shape != src.shape:
                raise ValueError(f"parameter shape mismatch {dst.shape} vs {src.shape}")
            dst[...] = src
        self.touch()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)[0]


def forward(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, Cache]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != net.layers[0].weights.shape[0]:
        raise ValueError(
            f"input dimension {h.shape[1]} != first layer {net.layers[0].weights.shape[0]}")
    inputs, preacts = [], []
    for layer in net.layers:
        inputs.append(h)
        z = h @ layer.weights + layer.biases
        preacts.append(z)
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
    out = h[0] if squeeze else h
    return out, Cache(inputs, preacts, net.version, squeeze)


def backward(net: DenseNet, cache: Cache, output_grad: np.ndarray,
             input_grad: bool = True) -> tuple[list[np.ndarray], np.ndarray | None]:
    """Reverse-mode gradients.

    Returns parameter gradients in :meth:`DenseNet.parameters` order and the
    gradient with respect to the input (``None`` when ``input_grad`` is off).
    """
    if cache.version != net.version:
        raise ValueError("stale cache: parameters changed since forward")
    g = np.asarray(output_grad, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    grads: list[np.ndarray] = []
    last = len(net.layers) - 1
    for k, (layer, h, z) in enumerate(zip(reversed(net.layers), reversed(cache.inputs),
                                          reversed(cache.preacts))):
        if layer.activation == "relu":
            g = g * (z > 0)
        grads.append(g.sum(axis=0))
        grads.append(h.T @ g)
        if k < last or input_grad:
            g = g @ layer.weights.T
    grads.reverse()
    if not input_grad:
        return grads, None
    return grads, (g[0] if cache.squeeze else g)


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]
             ) -> Sequence[np.ndarray]:
        """Bias-corrected adaptive-moment update, applied in place."""
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        for p, g, m in zip(params, grads, self.m):
            if p.shape != g.shape or m.shape != p.shape:
                raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("diverged: non-finite gradient")
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            buf = np.multiply(g, 1.0 - self.beta1)
            m *= self.beta1
            m += buf
            np.multiply(g, g, out=buf)
            buf *= 1.0 - self.beta2
            v *= self.beta2
            v += buf
            # p -= lr * (m / c1) / (sqrt(v / c2) + eps)
            np.sqrt(v, out=buf)
            buf *= 1.0 / np.sqrt(c2)
            buf += self.eps
            np.divide(m, buf, out=buf)
            buf *= self.lr / c1
            p -= buf
        return params


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray
                          ) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    p = softmax(logits)
    loss = -np.mean(np.log(p[np.arange(n), labels] + 1e-300))
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def gradient_check(net: DenseNet, x: np.ndarray, loss_fn: LossFn, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Covers every parameter and the input.
    """
    out, cache = forward(net, x)
    _, g_out = loss_fn(out)
    grads, g_in = backward(net, cache, g_out)

    def loss_at() -> float:
        return loss_fn(forward(net, x)[0])[0]

    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        numeric = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = loss_at()
            p[idx] = orig - h
            down = loss_at()
            p[idx] = orig
            numeric[idx] = (up - down) / (2 * h)
        worst = max(worst, relative_error(g, numeric))
    x = np.array(x, dtype=np.float64)
    numeric = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        up = loss_fn(forward(net, x)[0])[0]
        x[idx] = orig - h
        down = loss_fn(forward(net, x)[0])[0]
        x[idx] = orig
        numeric[idx] = (up - down) / (2 * h)
    return max(worst, relative_error(g_in, numeric))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_nets(path: str | Path, nets: dict[str, DenseNet], **extra: np.ndarray) -> None:
    """Write named networks to one ``.npz`` file (bit-exact on reload)."""
    arrays: dict[str, np.ndarray] = {"format_version": np.array(CHECKPOINT_VERSION)}
    for name, net in nets.items():
        arrays[f"{name}/sizes"] = np.array(net.sizes)
        arrays[f"{name}/activations"] = np.array([l.activation for l in net.layers])
        for i, layer in enumerate(net.layers):
            arrays[f"{name}/{i}/w"] = layer.weights
            arrays[f"{name}/{i}/b"] = layer.biases
    for key, value in extra.items():
        arrays[f"extra/{key}"] = np.asarray(value)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_nets(path: str | Path) -> tuple[dict[str, DenseNet], dict[str, np.ndarray]]:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        names = sorted({k.split("/")[0] for k in data.files
                        if "/" in k and not k.startswith("extra/")})
        nets = {}
        for name in names:
            sizes = [int(s) for s in data[f"{name}/sizes"]]
            acts = [str(a) for a in data[f"{name}/activations"]]
            net = DenseNet(sizes, acts)
            for i, layer in enumerate(net.layers):
                layer.weights = data[f"{name}/{i}/w"].copy()
                layer.biases = data[f"{name}/{i}/b"].copy()
            nets[name] = net
        extra = {k[len("extra/"):]: data[k].copy() for k in data.files if k.startswith("extra/")}
    return nets, extra
