"""Sampling, dataset generation, normalization, regression metrics and I/O.

Shared plumbing for every learning and optimization module: Latin hypercube
sampling over the design box, oracle-labelled dataset assembly, z-score /
range normalization with exact inverses, and the R²/nRMSE/MAE metric trio.
"""
from __future__ import annotations

import hashlib
import io
import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstantTruth, DegenerateColumn, IoError, SchemaVersionMismatch
from .rngutil import rng

DATASET_VERSION = 1


@dataclass(frozen=True)
class Bounds:
    """Per-variable [lo, hi] box for the 21 design coordinates."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("bounds must be two equal-length vectors")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("bounds must be finite")
        if not np.all(hi > lo):
            raise ValueError("each hi must exceed its lo")

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def span(self) -> np.ndarray:
        return self.hi - self.lo

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.lo) / self.span

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return self.lo + np.asarray(z, dtype=np.float64) * self.span

    def contains(self, x: np.ndarray, atol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lo - atol) and np.all(x <= self.hi + atol))

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=np.float64), self.lo, self.hi)

    def to_json(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Bounds":
        return cls(np.array(obj["lo"]), np.array(obj["hi"]))


def latin_hypercube(n: int, bounds: Bounds, seed: int) -> np.ndarray:
    """n stratified samples: one per stratum per dimension, jittered.

    Each column is an independent random permutation of the n strata with a
    uniform jitter inside the stratum, scaled into the bounds box.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    g = rng(seed)
    d = bounds.dim
    u = np.empty((n, d), dtype=np.float64)
    for j in range(d):
        perm = g.permutation(n)
        u[:, j] = (perm + g.uniform(0.0, 1.0, size=n)) / n
    return bounds.denormalize(u)


# ---------------------------------------------------------------------------
# normalization


@dataclass
class NormStats:
    """Per-column statistics; mode 'zscore' (mean/std) or 'range' (min/max)."""

    mode: str
    a: np.ndarray  # mean or min
    b: np.ndarray  # std or max

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.mode == "zscore":
            return (x - self.a) / self.b
        return (x - self.a) / (self.b - self.a)

    def invert(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if self.mode == "zscore":
            return z * self.b + self.a
        return z * (self.b - self.a) + self.a

    def to_json(self) -> dict:
        return {"mode": self.mode, "a": self.a.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "NormStats":
        return cls(obj["mode"], np.array(obj["a"], dtype=np.float64), np.array(obj["b"], dtype=np.float64))


def fit_norm(data: np.ndarray, mode: str = "zscore") -> NormStats:
    """Fit column statistics; raises DegenerateColumn on zero variance."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("need a 2-D array with at least 2 rows")
    if mode == "zscore":
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        bad = np.nonzero(std == 0.0)[0]
        if bad.size:
            raise DegenerateColumn(f"zero-variance column(s) {bad.tolist()}")
        return NormStats("zscore", mean, std)
    if mode == "range":
        lo = data.min(axis=0)
        hi = data.max(axis=0)
        bad = np.nonzero(hi == lo)[0]
        if bad.size:
            raise DegenerateColumn(f"constant column(s) {bad.tolist()}")
        return NormStats("range", lo, hi)
    raise ValueError(f"unknown mode {mode!r}")


def fit_apply_norm(data: np.ndarray, mode: str = "zscore") -> tuple[NormStats, np.ndarray]:
    stats = fit_norm(data, mode)
    return stats, stats.apply(data)


# ---------------------------------------------------------------------------
# metrics


def regression_metrics(truth: np.ndarray, pred: np.ndarray) -> dict:
    """R², range-normalized RMSE and MAE for one output channel."""
    truth = np.asarray(truth, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    if truth.size != pred.size:
        raise ValueError("length mismatch")
    if truth.size < 2:
        raise ValueError("need at least 2 points")
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        raise ConstantTruth("R² undefined for constant truth")
    ss_res = float(np.sum((truth - pred) ** 2))
    rmse = float(np.sqrt(ss_res / truth.size))
    spread = float(truth.max() - truth.min())
    return {
        "r2": 1.0 - ss_res / ss_tot,
        "nrmse": rmse / spread,
        "mae": float(np.mean(np.abs(truth - pred))),
    }


# ---------------------------------------------------------------------------
# datasets

LABEL_NAMES = ("mass_flow", "pressure_ratio", "efficiency")


@dataclass
class Dataset:
    """Design rows with oracle labels and generation provenance."""

    inputs: np.ndarray  # n x 21
    labels: np.ndarray  # n x 3, columns LABEL_NAMES
    provenance: dict = field(default_factory=dict)
    split_tags: np.ndarray | None = None  # per-row 'train' / 'val'

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("row counts disagree")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<f8").tobytes())
        return h.hexdigest()

    def split(self, val_fraction: float, seed: int) -> "Dataset":
        """Tag rows train/val (seeded shuffle); returns self."""
        n = len(self)
        n_val = max(1, int(round(n * val_fraction)))
        order = rng(seed, 917).permutation(n)
        tags = np.array(["train"] * n, dtype=object)
        tags[order[:n_val]] = "val"
        self.split_tags = tags
        return self

    def rows(self, tag: str) -> tuple[np.ndarray, np.ndarray]:
        if self.split_tags is None:
            raise ValueError("dataset has no split tags")
        mask = self.split_tags == tag
        return self.inputs[mask], self.labels[mask]


def generate_dataset(n_attempt: int, oracle, bounds: Bounds, seed: int) -> Dataset:
    """LHS-sample the box, label with the oracle, drop non-converged rows."""
    samples = latin_hypercube(n_attempt, bounds, seed)
    labels = oracle.evaluate_batch(samples)  # n x 3, NaN rows mean failure
    ok = np.all(np.isfinite(labels), axis=1)
    return Dataset(
        inputs=samples[ok],
        labels=labels[ok],
        provenance={
            "oracle": oracle.config_hash(),
            "seed": int(seed),
            "n_attempt": int(n_attempt),
            "n_failed": int(np.sum(~ok)),
        },
    )


# ---------------------------------------------------------------------------
# dataset I/O: compact binary columnar format + CSV export

_MAGIC = b"BDDS"


def save_dataset(dataset: Dataset, path) -> None:
    """Columnar binary: magic, version byte, JSON sidecar, raw columns."""
    sidecar = {
        "version": DATASET_VERSION,
        "n_rows": len(dataset),
        "n_inputs": dataset.inputs.shape[1],
        "n_labels": dataset.labels.shape[1],
        "provenance": dataset.provenance,
        "split_tags": None if dataset.split_tags is None else dataset.split_tags.tolist(),
    }
    head = json.dumps(sidecar, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(bytes([DATASET_VERSION]))
    buf.write(len(head).to_bytes(8, "little"))
    buf.write(head)
    buf.write(np.ascontiguousarray(dataset.inputs.T, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(dataset.labels.T, dtype="<f8").tobytes())
    payload = buf.getvalue()
    with open(path, "wb") as f:
        f.write(payload)
        f.write(zlib.crc32(payload).to_bytes(4, "little"))


def load_dataset(path) -> Dataset:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise IoError(str(e)) from e
    if len(blob) < 17 or blob[:4] != _MAGIC:
        raise IoError("not a dataset file")
    if zlib.crc32(blob[:-4]) != int.from_bytes(blob[-4:], "little"):
        raise IoError("dataset checksum mismatch")
    version = blob[4]
    if version != DATASET_VERSION:
        raise SchemaVersionMismatch(f"dataset version {version} unsupported")
    head_len = int.from_bytes(blob[5:13], "little")
    sidecar = json.loads(blob[13:13 + head_len].decode())
    if sidecar.get("version") != DATASET_VERSION:
        raise SchemaVersionMismatch("sidecar version mismatch")
    n, d_in, d_out = sidecar["n_rows"], sidecar["n_inputs"], sidecar["n_labels"]
    body = blob[13 + head_len:-4]
    inputs = np.frombuffer(body, dtype="<f8", count=n * d_in).reshape(d_in, n).T
    labels = np.frombuffer(body, dtype="<f8", count=n * d_out, offset=n * d_in * 8).reshape(d_out, n).T
    ds = Dataset(inputs.copy(), labels.copy(), sidecar["provenance"])
    if sidecar["split_tags"] is not None:
        ds.split_tags = np.array(sidecar["split_tags"], dtype=object)
    return ds


def export_csv(dataset: Dataset, path, input_names: list[str]) -> None:
    """CSV with a header row; floats written with exact round-trip repr."""
    if len(input_names) != dataset.inputs.shape[1]:
        raise ValueError("need one name per input column")
    with open(path, "w", newline="") as f:
        f.write(",".join(list(input_names) + list(LABEL_NAMES)) + "\n")
        for x, y in zip(dataset.inputs, dataset.labels):
            f.write(",".join(repr(v) for v in x) + "," + ",".join(repr(v) for v in y) + "\n")
