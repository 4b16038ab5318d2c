"""MLP discriminators/generators, RMSprop/Adam, weight clipping, checkpoints."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, relu

DEFAULT_HIDDEN = (128, 128)


@dataclass
class MLP:
    """Fully connected ReLU network with a linear output layer.

    Parameters are stored as plain arrays keyed ``W0, b0, W1, b1, ...`` with
    ``W_k`` of shape ``(fan_in, fan_out)`` so a batch maps as ``X @ W + b``.
    """

    widths: tuple[int, ...]
    params: dict[str, np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "MLP":
        return MLP(self.widths, {k: v.copy() for k, v in self.params.items()})

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k]).tobytes())
        return h.hexdigest()

    def weights(self) -> list[np.ndarray]:
        return [self.params[f"W{k}"] for k in range(self.n_layers)]


# Discriminators and generators share the same structure.
DiscriminatorNet = MLP
GeneratorNet = MLP


def mlp_init(widths, seed: int) -> MLP:
    """He-style fan-in scaled uniform init: ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2:
        raise ValueError("an MLP needs at least input and output widths")
    if any(w < 1 for w in widths):
        raise ValueError(f"invalid widths {widths}")
    rng = np.random.default_rng(seed)
    params = {}
    for k, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = np.sqrt(6.0 / fan_in)
        params[f"W{k}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"b{k}"] = np.zeros(fan_out)
    return MLP(widths, params)


def discriminator(input_dim: int, seed: int, hidden=DEFAULT_HIDDEN) -> MLP:
    return mlp_init((input_dim, *hidden, 1), seed)


def generator(latent_dim: int, output_dim: int, seed: int, hidden=DEFAULT_HIDDEN) -> MLP:
    if latent_dim > output_dim:
        raise ValueError("latent dimension must not exceed the data dimension")
    return mlp_init((latent_dim, *hidden, output_dim), seed)


def leaf_params(net: MLP) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in net.params.items()}


def forward(net: MLP, batch, params: Mapping[str, Tensor] | None = None) -> Tensor:
    """Apply the network row-wise.

    Discriminators (scalar output) return a length-N vector, generators an
    N x out matrix.  Pass ``params`` (e.g. from :func:`leaf_params`) to make
    the result differentiable in the weights.
    """
    x = as_tensor(batch)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"batch of shape {x.shape} does not fit input width {net.input_dim}")
    p = params if params is not None else {k: Tensor(v) for k, v in net.params.items()}
    h = x
    for k in range(net.n_layers):
        h = h @ p[f"W{k}"] + p[f"b{k}"]
        if k < net.n_layers - 1:
            h = relu(h)
    if net.output_dim == 1:
        h = h.reshape(h.shape[0])
    return h


mlp_forward = forward


@dataclass
class OptimizerState:
    """RMSprop or Adam state.  Updates ASCEND: gradients passed in are of the
    objective to maximize."""

    method: str
    lr: float
    betas: tuple[float, float] = (0.0, 0.9)
    alpha: float = 0.99  # RMSprop smoothing
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.method = self.method.lower()
        if self.method not in ("rmsprop", "adam"):
            raise ValueError(f"unknown optimizer {self.method!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")

    def describe(self) -> dict:
        d = {"method": self.method, "lr": self.lr, "eps": self.eps}
        if self.method == "adam":
            d["betas"] = list(self.betas)
        else:
            d["alpha"] = self.alpha
        return d


def make_optimizer(method: str, lr: float, **kw) -> OptimizerState:
    return OptimizerState(method=method, lr=lr, **kw)


def optimizer_step(
    params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: OptimizerState
) -> dict[str, np.ndarray]:
    """One in-place ascent step; returns ``params`` for convenience."""
    state.step += 1
    t = state.step
    for k, g in grads.items():
        p = params[k]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {k!r} has shape {g.shape}, parameter {p.shape}")
        if state.method == "rmsprop":
            v = state.v.setdefault(k, np.zeros_like(p))
            if v.shape != p.shape:
                raise ShapeError(f"accumulator for {k!r} has shape {v.shape}")
            v *= state.alpha
            v += (1 - state.alpha) * g * g
            p += state.lr * g / (np.sqrt(v) + state.eps)
        else:
            b1, b2 = state.betas
            m = state.m.setdefault(k, np.zeros_like(p))
            v = state.v.setdefault(k, np.zeros_like(p))
            if m.shape != p.shape or v.shape != p.shape:
                raise ShapeError(f"accumulator for {k!r} does not match parameter shape")
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            p += state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def clip_weights(net: MLP, xi: float, clip_biases: bool = True) -> MLP:
    """Project every weight (and bias, unless disabled) into ``[-xi, xi]`` in place."""
    if xi <= 0:
        raise ValueError("clip bound must be positive")
    for k, v in net.params.items():
        if k.startswith("W") or clip_biases:
            np.clip(v, -xi, xi, out=v)
    return net


def lipschitz_bound(net: MLP) -> float:
    """Product of layer spectral norms; ReLU is 1-Lipschitz."""
    return float(np.prod([np.linalg.norm(W, 2) for W in net.weights()]))


# -- checkpoints -------------------------------------------------------------
# Little-endian records, repeated until EOF:
#   u32 name_len | name (utf-8) | u32 rank | u64 dims[rank] | f64 values (row-major)


def save_checkpoint(net: MLP, path) -> None:
    buf = bytearray()
    for name, arr in net.params.items():
        raw = name.encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
        buf += struct.pack("<I", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path) -> MLP:
    data = Path(path).read_bytes()
    params: dict[str, np.ndarray] = {}
    pos = 0
    while pos < len(data):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos : pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}Q", data, pos)
        pos += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        if pos + 8 * count > len(data):
            raise ValueError(f"truncated checkpoint while reading {name!r}")
        params[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(dims).copy()
        pos += 8 * count
    n_layers = len([k for k in params if k.startswith("W")])
    widths = [params["W0"].shape[0]] + [params[f"W{k}"].shape[1] for k in range(n_layers)]
    return MLP(tuple(widths), params)
