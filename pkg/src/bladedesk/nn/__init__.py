"""Minimal float64 neural-network core: tape autodiff, layers, Adam."""

from . import autodiff, checkpoint
from .autodiff import Tape, attention_values
from .net import (
    AdamState,
    Dense,
    Forward,
    Layer,
    LayerNorm,
    ParamStore,
    Residual,
    SelfAttention,
    SiLU,
    TokenEmbed,
    adam_step,
    backward,
    forward,
    init_layers,
    sinusoidal_embedding,
    sinusoidal_embedding_batch,
    uniform_init,
)

__all__ = [
    "AdamState",
    "Dense",
    "Forward",
    "Layer",
    "LayerNorm",
    "ParamStore",
    "Residual",
    "SelfAttention",
    "SiLU",
    "Tape",
    "TokenEmbed",
    "adam_step",
    "attention_values",
    "autodiff",
    "backward",
    "checkpoint",
    "forward",
    "init_layers",
    "sinusoidal_embedding",
    "sinusoidal_embedding_batch",
    "uniform_init",
]
