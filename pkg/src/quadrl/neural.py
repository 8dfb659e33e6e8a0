"""Minimal dense-network substrate: MLPs with ReLU hidden layers, exact
reverse-mode gradients, Adam, Polyak averaging, and checkpoint files.

Everything is float64 numpy; networks are plain value objects mutated only
by their owner.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

CHECKPOINT_MAGIC = b"QRLCKPT1"
CHECKPOINT_VERSION = 2


@dataclass(frozen=True)
class Head:
    """Output head applied to a slice of the final linear layer.

    kind: 'linear', 'tanh' (squashes to [-1, 1]) or 'sigmoid' (affine
    sigmoid onto [lo, hi]). init_scale shrinks the final-layer columns
    feeding this head at initialization.
    """

    kind: str
    size: int
    lo: float = -1.0
    hi: float = 1.0
    init_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "tanh", "sigmoid"):
            raise ValueError(f"unknown head kind {self.kind!r}")
        if self.size <= 0:
            raise ValueError("head size must be positive")

    def apply(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return z
        if self.kind == "tanh":
            return np.tanh(z)
        sig = 1.0 / (1.0 + np.exp(-z))
        return self.lo + (self.hi - self.lo) * sig

    def grad(self, z: np.ndarray, out: np.ndarray) -> np.ndarray:
        """d out / d z evaluated from the cached pre/post activations."""
        if self.kind == "linear":
            return np.ones_like(z)
        if self.kind == "tanh":
            return 1.0 - out * out
        sig = (out - self.lo) / (self.hi - self.lo)
        return (self.hi - self.lo) * sig * (1.0 - sig)


class Mlp:
    """Fully connected network with ReLU hidden layers and sliced output heads."""

    def __init__(self, dims: list[int], heads: list[Head] | None = None,
                 rng: np.random.Generator | None = None):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        self.dims = list(int(d) for d in dims)
        self.heads = list(heads) if heads else [Head("linear", self.dims[-1])]
        if sum(h.size for h in self.heads) != self.dims[-1]:
            raise ValueError("head sizes must sum to the output dimension")
        rng = rng if rng is not None else np.random.default_rng()
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i in range(len(self.dims) - 1):
            fan_in = self.dims[i]
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, self.dims[i + 1]))
            b = rng.uniform(-bound, bound, size=self.dims[i + 1])
            if i == len(self.dims) - 2:
                col = 0
                for h in self.heads:
                    if h.init_scale != 1.0:
                        w[:, col:col + h.size] *= h.init_scale
                        b[col:col + h.size] *= h.init_scale
                    col += h.size
            self.weights.append(w)
            self.biases.append(b)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.dims = list(self.dims)
        clone.heads = list(self.heads)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def forward(self, x: np.ndarray):
        """Run the network; returns (output, cache) with cache for backward."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        activations = [x]
        h = x
        n_layers = len(self.weights)
        for i in range(n_layers - 1):
            h = np.maximum(h @ self.weights[i] + self.biases[i], 0.0)
            activations.append(h)
        z = h @ self.weights[-1] + self.biases[-1]
        out = np.empty_like(z)
        col = 0
        for head in self.heads:
            out[:, col:col + head.size] = head.apply(z[:, col:col + head.size])
            col += head.size
        cache = (activations, z, out)
        return out, cache

    def backward(self, cache, grad_out: np.ndarray):
        """Backpropagate d loss / d output.

        Returns (grads, grad_input): grads matches self.params layout,
        grad_input is d loss / d x for chaining into upstream networks.
        """
        activations, z, out = cache
        grad_out = np.atleast_2d(np.asarray(grad_out, dtype=float))
        assert grad_out.shape == z.shape, "output gradient shape mismatch"
        delta = np.empty_like(grad_out)
        col = 0
        for head in self.heads:
            sl = slice(col, col + head.size)
            delta[:, sl] = grad_out[:, sl] * head.grad(z[:, sl], out[:, sl])
            col += head.size
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            a = activations[i]
            grads[2 * i] = a.T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (a > 0.0)
            else:
                delta = delta @ self.weights[i].T
        return grads, delta


class AdamState:
    """Bias-corrected Adam accumulator for a list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]


def adam_step(state: AdamState, params: list[np.ndarray],
              grads: list[np.ndarray]) -> list[np.ndarray]:
    """One in-place Adam update; returns the parameter list."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    correct1 = 1.0 - b1**t
    correct2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / correct1) / (np.sqrt(v / correct2) + state.eps)
    return params


def polyak(target_params: list[np.ndarray], source_params: list[np.ndarray],
           tau: float = 0.005) -> list[np.ndarray]:
    """In-place exponential tracking: target <- (1-tau) target + tau source."""
    for t, s in zip(target_params, source_params):
        t *= 1.0 - tau
        t += tau * s
    return target_params


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Scale the whole gradient list down if its global L2 norm exceeds max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return grads


def _mlp_spec(net: Mlp) -> dict:
    return {
        "dims": net.dims,
        "heads": [
            {"kind": h.kind, "size": h.size, "lo": h.lo, "hi": h.hi,
             "init_scale": h.init_scale}
            for h in net.heads
        ],
    }


def _mlp_from_spec(spec: dict) -> Mlp:
    heads = [Head(**h) for h in spec["heads"]]
    net = Mlp.__new__(Mlp)
    net.dims = list(spec["dims"])
    net.heads = heads
    net.weights = []
    net.biases = []
    for i in range(len(net.dims) - 1):
        net.weights.append(np.zeros((net.dims[i], net.dims[i + 1])))
        net.biases.append(np.zeros(net.dims[i + 1]))
    return net


def save_checkpoint(path, networks: dict[str, Mlp],
                    optimizers: dict[str, AdamState] | None = None,
                    scalars: dict[str, float] | None = None,
                    meta: dict | None = None) -> None:
    """Write a versioned binary checkpoint.

    Layout: magic, u32 version, u64 JSON header length, JSON header, then
    raw little-endian float64 blocks in the header's block order. The
    header records layer dimensions, head configs, optimizer hyperparams
    and step counts, scalar values, and arbitrary JSON metadata.
    """
    optimizers = optimizers or {}
    scalars = scalars or {}
    header = {
        "networks": {name: _mlp_spec(net) for name, net in networks.items()},
        "optimizers": {
            name: {
                "lr": st.lr, "beta1": st.beta1, "beta2": st.beta2,
                "eps": st.eps, "step_count": st.step_count,
            }
            for name, st in optimizers.items()
        },
        "scalars": scalars,
        "meta": meta or {},
        "block_order": [],
    }
    blocks: list[np.ndarray] = []

    def add_block(tag, arr):
        header["block_order"].append({"tag": tag, "shape": list(arr.shape)})
        blocks.append(np.ascontiguousarray(arr, dtype="<f8"))

    for name, net in sorted(networks.items()):
        for i, p in enumerate(net.params):
            add_block(f"net/{name}/{i}", p)
    for name, st in sorted(optimizers.items()):
        for i, m in enumerate(st.m):
            add_block(f"adam_m/{name}/{i}", m)
        for i, v in enumerate(st.v):
            add_block(f"adam_v/{name}/{i}", v)

    payload = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        for b in blocks:
            fh.write(b.tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (networks, optimizers, scalars, meta)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        version = struct.unpack("<I", fh.read(4))[0]
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        data = {}
        for entry in header["block_order"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            data[entry["tag"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    networks = {}
    for name, spec in header["networks"].items():
        net = _mlp_from_spec(spec)
        for i in range(len(net.weights)):
            net.weights[i] = data[f"net/{name}/{2 * i}"]
            net.biases[i] = data[f"net/{name}/{2 * i + 1}"]
        networks[name] = net

    optimizers = {}
    for name, ospec in header["optimizers"].items():
        net = networks[name]
        st = AdamState(net.params, lr=ospec["lr"], beta1=ospec["beta1"],
                       beta2=ospec["beta2"], eps=ospec["eps"])
        st.step_count = ospec["step_count"]
        st.m = [data[f"adam_m/{name}/{i}"] for i in range(len(st.m))]
        st.v = [data[f"adam_v/{name}/{i}"] for i in range(len(st.v))]
        optimizers[name] = st

    return networks, optimizers, header["scalars"], header["meta"]
