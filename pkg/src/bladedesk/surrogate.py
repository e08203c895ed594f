"""Transformer-encoder surrogate: 21 design variables -> (mdot, pi, eta).

Each normalized input scalar becomes one token through a learned per-index
value vector plus positional embedding; a stack of pre-norm encoder blocks
(multi-head self-attention and feed-forward, both residual) is mean-pooled
over tokens and projected to the three performance metrics. Inputs and
outputs are z-scored with statistics fitted on the training split and
stored with the checkpoint.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .errors import DatasetTooSmall, EmptySet, UnfittedStats, UntrainedNet
from .nn import autodiff as ad
from .oracle import METRIC_NAMES, PerformanceTriple
from .pipeline import Dataset, NormStats, fit_norm, regression_metrics
from .rngutil import rng


@dataclass(frozen=True)
class SurrogateConfig:
    n_inputs: int = 21
    n_outputs: int = 3
    width: int = 64
    depth: int = 3
    heads: int = 4
    ff_width: int = 128
    pooling: str = "mean"


class SurrogateNet:
    """Config + parameters + fitted normalization statistics."""

    def __init__(self, config: SurrogateConfig, store: nn.ParamStore,
                 in_stats: NormStats | None = None, out_stats: NormStats | None = None,
                 trained: bool = False):
        self.config = config
        self.store = store
        self.in_stats = in_stats
        self.out_stats = out_stats
        self.trained = trained
        self._layers = _build_layers(config)

    @classmethod
    def create(cls, config: SurrogateConfig, seed: int) -> "SurrogateNet":
        layers = _build_layers(config)
        store = nn.init_layers(layers, rng(seed, 3001))
        return cls(config, store)

    # -- forward ------------------------------------------------------------

    def _forward_nodes(self, fw: nn.Forward, x_norm: np.ndarray) -> tuple[ad.Node, ad.Node]:
        """Returns (pooled [B, W], output [B, n_outputs]) nodes."""
        node = fw.input(x_norm)
        for layer in self._layers[:-1]:
            node = layer.apply(fw, node)
        pooled = ad.mean_(fw.tape, node, axis=1)  # [B, W]
        out = self._layers[-1].apply(fw, pooled)
        return pooled, out

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        """Denormalized predictions for a [n, 21] batch; pure function."""
        if not self.trained:
            raise UntrainedNet("surrogate has not been trained")
        x_norm = self._check_stats().apply(np.atleast_2d(x))
        fw = nn.Forward(self.store)
        _, out = self._forward_nodes(fw, x_norm)
        return self.out_stats.invert(out.value)

    def predict(self, x) -> PerformanceTriple:
        return PerformanceTriple.from_array(self.predict_batch(np.asarray(x))[0])

    def pooled_repr(self, x: np.ndarray) -> np.ndarray:
        """Mean-pooled encoder representation [n, width] (pre-head)."""
        if not self.trained:
            raise UntrainedNet("surrogate has not been trained")
        x_norm = self._check_stats().apply(np.atleast_2d(x))
        fw = nn.Forward(self.store)
        pooled, _ = self._forward_nodes(fw, x_norm)
        return pooled.value

    def _check_stats(self) -> NormStats:
        if self.in_stats is None or self.out_stats is None:
            raise UnfittedStats("normalization statistics not fitted")
        return self.in_stats

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "kind": "surrogate",
            "config": asdict(self.config),
            "in_stats": None if self.in_stats is None else self.in_stats.to_json(),
            "out_stats": None if self.out_stats is None else self.out_stats.to_json(),
            "trained": self.trained,
        }
        nn.checkpoint.save(path, self.store, meta)

    @classmethod
    def load(cls, path) -> "SurrogateNet":
        store, meta = nn.checkpoint.load(path)
        cfg = SurrogateConfig(**meta["config"])
        return cls(
            cfg, store,
            in_stats=None if meta["in_stats"] is None else NormStats.from_json(meta["in_stats"]),
            out_stats=None if meta["out_stats"] is None else NormStats.from_json(meta["out_stats"]),
            trained=meta["trained"],
        )


def _build_layers(cfg: SurrogateConfig) -> list[nn.Layer]:
    layers: list[nn.Layer] = [nn.TokenEmbed("embed", cfg.n_inputs, cfg.width)]
    for i in range(cfg.depth):
        layers.append(nn.Residual([
            nn.LayerNorm(f"enc{i}.ln1", cfg.width),
            nn.SelfAttention(f"enc{i}.attn", cfg.width, cfg.heads),
        ]))
        layers.append(nn.Residual([
            nn.LayerNorm(f"enc{i}.ln2", cfg.width),
            nn.Dense(f"enc{i}.ff1", cfg.width, cfg.ff_width),
            nn.SiLU(),
            nn.Dense(f"enc{i}.ff2", cfg.ff_width, cfg.width),
        ]))
    layers.append(nn.LayerNorm("final_ln", cfg.width))
    layers.append(nn.Dense("head", cfg.width, cfg.n_outputs))
    return layers


def encode_tokens(x, net: SurrogateNet) -> np.ndarray:
    """Token sequence [n_inputs, width] for one design (affine per index)."""
    if net.in_stats is None:
        raise UnfittedStats("normalization statistics not fitted")
    x_norm = net.in_stats.apply(np.asarray(x, dtype=np.float64)[None, :])[0]
    value = net.store.params["embed.value"]
    pos = net.store.params["embed.pos"]
    return x_norm[:, None] * value + pos


def train(
    dataset: Dataset,
    config: SurrogateConfig = SurrogateConfig(),
    seed: int = 0,
    epochs: int = 100,
    batch_size: int = 256,
    lr: float = 3e-3,
    patience: int = 20,
    val_fraction: float = 0.10,
) -> tuple[SurrogateNet, dict]:
    """Train on oracle-labelled rows; early-stops on validation plateau.

    Returns the net (restored to the best-validation parameters) and a
    history dict with per-epoch train/val MSE on normalized outputs.
    """
    if len(dataset) < 100:
        raise DatasetTooSmall(f"need >= 100 rows, got {len(dataset)}")
    if dataset.split_tags is None:
        dataset.split(val_fraction, seed)
    x_train, y_train = dataset.rows("train")
    x_val, y_val = dataset.rows("val")

    net = SurrogateNet.create(config, seed)
    net.in_stats = fit_norm(x_train, "zscore")
    net.out_stats = fit_norm(y_train, "zscore")
    xt = net.in_stats.apply(x_train)
    yt = net.out_stats.apply(y_train)
    xv = net.in_stats.apply(x_val)
    yv = net.out_stats.apply(y_val)

    opt = nn.AdamState(lr=lr)
    g = rng(seed, 3002)
    n = xt.shape[0]
    history = {"train_mse": [], "val_mse": []}
    best_val = np.inf
    best_params = None
    stale = 0
    t0 = time.monotonic()
    net.trained = True  # enables predict_batch during validation
    for epoch in range(epochs):
        order = g.permutation(n)
        total = 0.0
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            xb, yb = xt[idx], yt[idx]
            fw = nn.Forward(net.store)
            _, out = net._forward_nodes(fw, xb)
            diff = ad.sub(fw.tape, out, yb)
            loss = ad.mean_(fw.tape, ad.mul(fw.tape, diff, diff))
            fw.backward(1.0, output=loss)
            nn.adam_step(opt, net.store)
            total += float(loss.value) * len(idx)
        net.store.check_finite()
        train_mse = total / n
        val_pred = _forward_norm(net, xv)
        val_mse = float(np.mean((val_pred - yv) ** 2))
        history["train_mse"].append(train_mse)
        history["val_mse"].append(val_mse)
        if val_mse < best_val - 1e-12:
            best_val = val_mse
            best_params = {k: v.copy() for k, v in net.store.params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    if best_params is not None:
        for k, v in best_params.items():
            net.store.params[k][...] = v
    history["wall_time_s"] = time.monotonic() - t0
    history["epochs_run"] = len(history["train_mse"])
    return net, history


def _forward_norm(net: SurrogateNet, x_norm: np.ndarray) -> np.ndarray:
    fw = nn.Forward(net.store)
    _, out = net._forward_nodes(fw, x_norm)
    return out.value


@dataclass
class MetricsReport:
    per_metric: dict[str, dict]

    def to_json(self) -> str:
        return json.dumps(self.per_metric, sort_keys=True, indent=2)


def evaluate(net: SurrogateNet, testset: Dataset) -> MetricsReport:
    """Per-metric R², nRMSE and MAE on a labelled test set."""
    if len(testset) == 0:
        raise EmptySet("empty test set")
    pred = net.predict_batch(testset.inputs)
    report = {}
    for j, name in enumerate(METRIC_NAMES):
        report[name] = regression_metrics(testset.labels[:, j], pred[:, j])
    return MetricsReport(report)
