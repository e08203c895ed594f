"""Parameter storage, the layer vocabulary, and the Adam optimizer.

The layer set is deliberately frozen to what the two models in this project
need: dense, layer-norm, multi-head self-attention, residual add, SiLU and
per-index token embeddings. Layers are stateless descriptors; parameters
live in a ``ParamStore`` under dotted names, and each forward evaluation
records onto its own tape (see ``autodiff``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NoForwardRecord, NonFiniteValue, OddDim, ShapeMismatch
from . import autodiff as ad

Array = np.ndarray


class ParamStore:
    """Named float64 parameters with same-shaped gradient slots."""

    def __init__(self) -> None:
        self.params: dict[str, Array] = {}
        self.grads: dict[str, Array] = {}

    def add(self, name: str, value: Array) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        v = np.asarray(value, dtype=np.float64)
        self.params[name] = v
        self.grads[name] = np.zeros_like(v)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def check_finite(self) -> None:
        for name, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise NonFiniteValue(f"parameter {name!r} contains NaN/Inf")

    def copy(self) -> "ParamStore":
        s = ParamStore()
        for name, v in self.params.items():
            s.add(name, v.copy())
        return s


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Array:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Forward:
    """Record of one forward evaluation; required for ``backward``."""

    def __init__(self, store: ParamStore):
        self.store = store
        self.tape = ad.Tape()
        self._param_nodes: dict[str, ad.Node] = {}
        self.output: ad.Node | None = None
        self._consumed = False

    def param(self, name: str) -> ad.Node:
        node = self._param_nodes.get(name)
        if node is None:
            node = self.tape.leaf(self.store.params[name])
            self._param_nodes[name] = node
        return node

    def input(self, value) -> ad.Node:
        return self.tape.leaf(np.asarray(value, dtype=np.float64))

    def backward(self, loss_grad=1.0, output: ad.Node | None = None) -> None:
        """Accumulate parameter gradients into the store. One-shot per record."""
        out = output if output is not None else self.output
        if out is None or self._consumed:
            raise NoForwardRecord("no recorded forward pass to differentiate")
        self._consumed = True
        self.tape.backward(out, loss_grad)
        for name, node in self._param_nodes.items():
            if node.grad is not None:
                self.store.grads[name] += node.grad


# ---------------------------------------------------------------------------
# layer vocabulary


class Layer:
    """Descriptor interface: owns parameter names, applies itself on a tape."""

    def init_params(self, store: ParamStore, rng: np.random.Generator) -> None:  # pragma: no cover
        pass

    def apply(self, fw: Forward, x: ad.Node) -> ad.Node:
        raise NotImplementedError


@dataclass
class Dense(Layer):
    name: str
    in_dim: int
    out_dim: int

    def init_params(self, store, rng):
        store.add(f"{self.name}.W", uniform_init(rng, (self.in_dim, self.out_dim), self.in_dim))
        store.add(f"{self.name}.b", uniform_init(rng, (self.out_dim,), self.in_dim))

    def apply(self, fw, x):
        t = fw.tape
        xv = x.value
        if xv.shape[-1] != self.in_dim:
            raise ShapeMismatch(f"{self.name}: expected last dim {self.in_dim}, got {xv.shape}")
        w, b = fw.param(f"{self.name}.W"), fw.param(f"{self.name}.b")
        if xv.ndim == 2:
            return ad.add(t, ad.matmul(t, x, w), b)
        flat = ad.reshape(t, x, (-1, self.in_dim))
        y = ad.add(t, ad.matmul(t, flat, w), b)
        return ad.reshape(t, y, xv.shape[:-1] + (self.out_dim,))


@dataclass
class SiLU(Layer):
    def apply(self, fw, x):
        return ad.silu(fw.tape, x)


@dataclass
class LayerNorm(Layer):
    name: str
    dim: int
    eps: float = 1e-5

    def init_params(self, store, rng):
        store.add(f"{self.name}.gamma", np.ones(self.dim))
        store.add(f"{self.name}.beta", np.zeros(self.dim))

    def apply(self, fw, x):
        return ad.layer_norm(
            fw.tape, x, fw.param(f"{self.name}.gamma"), fw.param(f"{self.name}.beta"), self.eps
        )


@dataclass
class Residual(Layer):
    """y = x + inner(x); the inner stack must preserve the shape."""

    inner: list[Layer]

    def init_params(self, store, rng):
        for layer in self.inner:
            layer.init_params(store, rng)

    def apply(self, fw, x):
        y = x
        for layer in self.inner:
            y = layer.apply(fw, y)
        return ad.add(fw.tape, x, y)


@dataclass
class SelfAttention(Layer):
    """Multi-head self-attention over a `[batch, n, dim]` token tensor."""

    name: str
    dim: int
    heads: int

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ShapeMismatch(f"{self.name}: heads {self.heads} must divide dim {self.dim}")

    def init_params(self, store, rng):
        for part in ("q", "k", "v", "o"):
            store.add(f"{self.name}.{part}.W", uniform_init(rng, (self.dim, self.dim), self.dim))
            store.add(f"{self.name}.{part}.b", uniform_init(rng, (self.dim,), self.dim))

    def _proj(self, fw, x, part):
        t = fw.tape
        flat = ad.reshape(t, x, (-1, self.dim))
        y = ad.add(t, ad.matmul(t, flat, fw.param(f"{self.name}.{part}.W")), fw.param(f"{self.name}.{part}.b"))
        return y

    def apply(self, fw, x):
        t = fw.tape
        if x.value.ndim != 3:
            raise ShapeMismatch(f"{self.name}: expected [batch, n, dim], got {x.value.shape}")
        b, n, _ = x.value.shape
        h, d = self.heads, self.dim // self.heads

        def split(flat):
            y = ad.reshape(t, flat, (b, n, h, d))
            return ad.transpose(t, y, (0, 2, 1, 3))  # [b, h, n, d]

        q = split(self._proj(fw, x, "q"))
        k = split(self._proj(fw, x, "k"))
        v = split(self._proj(fw, x, "v"))
        o = ad.attention(t, q, k, v)  # [b, h, n, d]
        merged = ad.reshape(t, ad.transpose(t, o, (0, 2, 1, 3)), (-1, self.dim))
        out = ad.add(t, ad.matmul(t, merged, fw.param(f"{self.name}.o.W")), fw.param(f"{self.name}.o.b"))
        return ad.reshape(t, out, (b, n, self.dim))


@dataclass
class TokenEmbed(Layer):
    """Per-index scalar-to-token embedding: token_i = x_i * value_i + pos_i."""

    name: str
    n_tokens: int
    dim: int

    def init_params(self, store, rng):
        store.add(f"{self.name}.value", uniform_init(rng, (self.n_tokens, self.dim), 1))
        store.add(f"{self.name}.pos", uniform_init(rng, (self.n_tokens, self.dim), 1))

    def apply(self, fw, x):
        t = fw.tape
        if x.value.shape[-1] != self.n_tokens:
            raise ShapeMismatch(f"{self.name}: expected {self.n_tokens} scalars, got {x.value.shape}")
        col = ad.reshape(t, x, x.value.shape + (1,))  # [..., n, 1]
        return ad.add(t, ad.mul(t, col, fw.param(f"{self.name}.value")), fw.param(f"{self.name}.pos"))


def init_layers(layers: list[Layer], rng: np.random.Generator) -> ParamStore:
    store = ParamStore()
    for layer in layers:
        layer.init_params(store, rng)
    return store


def forward(layers: list[Layer], store: ParamStore, x) -> tuple[Array, Forward]:
    """Evaluate a layer sequence, returning the output and the record."""
    fw = Forward(store)
    node = fw.input(x)
    for layer in layers:
        node = layer.apply(fw, node)
    if not np.all(np.isfinite(node.value)):
        raise NonFiniteValue("forward pass produced NaN/Inf")
    fw.output = node
    return node.value, fw


def backward(record: Forward, loss_grad) -> None:
    """Backpropagate ``loss_grad`` (d loss / d output) through a record."""
    record.backward(loss_grad)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Standard Adam with bias correction; moments keyed like the store."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)


def adam_step(state: AdamState, store: ParamStore) -> None:
    """One Adam update from the accumulated gradients; zeroes them after."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, p in store.params.items():
        g = store.grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    store.zero_grads()


def sinusoidal_embedding(t: int, dim: int) -> Array:
    """Interleaved sin/cos embedding of a step index at geometric frequencies."""
    if dim % 2 != 0:
        raise OddDim(f"embedding dim must be even, got {dim}")
    if t < 0:
        raise ValueError("t must be >= 0")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = float(t) * freqs
    out = np.empty(dim, dtype=np.float64)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


def sinusoidal_embedding_batch(ts: Array, dim: int) -> Array:
    """Vectorized ``sinusoidal_embedding`` for an integer array of steps."""
    if dim % 2 != 0:
        raise OddDim(f"embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = np.asarray(ts, dtype=np.float64)[:, None] * freqs[None, :]
    out = np.empty((len(ts), dim), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out
