"""Conditional denoising diffusion over design vectors.

Standard DDPM ancestral machinery: closed-form forward noising
``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``, epsilon-prediction
training, and the reverse update
``x_{t-1} = (x_t - (1-a_t)/sqrt(1-abar_t) eps_hat) / sqrt(a_t) + sigma_t z``
with ``z = 0`` at the final step and ``sigma_t = sqrt(beta_t)``.

The denoiser is a small 1-D U-Net over the design coordinates: each value
becomes a token, two down blocks widen the channel dimension, one
attention block sits at the bottleneck, and two up blocks with skip
concatenation bring it back; sinusoidal step embeddings and the condition
vector are projected and added at every block.

Conditioning is hybrid: the performance target normalized to [0, 1] by
training statistics, optionally concatenated with the output of a small
guidance network trained to map targets to a compact latent summary of the
surrogate's pooled representation.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .errors import InvalidRange, NonFiniteValue, StepOutOfRange, UnfittedStats, UntrainedNet
from .nn import autodiff as ad
from .oracle import PerformanceTriple
from .pipeline import Bounds, NormStats, fit_norm
from .rngutil import rng

DEFAULT_T = 200
DEFAULT_BETA_START = 1e-4
# chosen so abar_T < 0.01 at T=200 (a 0.02 end leaves abar_T ~ 0.13,
# far from pure noise at this short step count)
DEFAULT_BETA_END = 0.05


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule and its derived per-step arrays (1-indexed via t)."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise StepOutOfRange(f"t must be in [1, {self.T}], got {t}")

    def to_json(self) -> dict:
        return {"T": self.T, "beta_start": float(self.beta[0]), "beta_end": float(self.beta[-1])}


def make_schedule(T: int = DEFAULT_T, beta_start: float = DEFAULT_BETA_START,
                  beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Linear beta interpolation with cumulative products precomputed."""
    if T < 1:
        raise InvalidRange(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise InvalidRange(f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma = np.sqrt(beta)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma)


def forward_diffuse(x0: np.ndarray, t: int, eps: np.ndarray, s: NoiseSchedule) -> np.ndarray:
    """Closed-form noising of x0 at step t with caller-supplied noise."""
    s.check_step(t)
    ab = s.alpha_bar[t - 1]
    return np.sqrt(ab) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - ab) * np.asarray(eps, dtype=np.float64)


# ---------------------------------------------------------------------------
# condition construction


@dataclass
class ConditionVector:
    target: np.ndarray  # [3] normalized performance target
    guidance: np.ndarray  # [guidance_dim] learned embedding or zeros

    def concat(self) -> np.ndarray:
        return np.concatenate([self.target, self.guidance])


class GuidanceNet:
    """Dense 3->32->32->16 net mapping normalized targets to a latent summary."""

    DIM_OUT = 16

    def __init__(self, store: nn.ParamStore, trained: bool = False):
        self.store = store
        self.trained = trained
        self._layers = [
            nn.Dense("guide.fc1", 3, 32), nn.SiLU(),
            nn.Dense("guide.fc2", 32, 32), nn.SiLU(),
            nn.Dense("guide.fc3", 32, self.DIM_OUT),
        ]

    @classmethod
    def create(cls, seed: int) -> "GuidanceNet":
        g = cls(nn.ParamStore())
        for layer in g._layers:
            layer.init_params(g.store, rng(seed, 4001))
        return g

    def forward_batch(self, t_norm: np.ndarray) -> np.ndarray:
        out, _ = nn.forward(self._layers, self.store, np.atleast_2d(t_norm))
        return out

    def train(self, targets_norm: np.ndarray, latents: np.ndarray, seed: int,
              epochs: int = 300, lr: float = 3e-3, batch_size: int = 256) -> list[float]:
        opt = nn.AdamState(lr=lr)
        g = rng(seed, 4002)
        n = targets_norm.shape[0]
        losses = []
        for _ in range(epochs):
            order = g.permutation(n)
            total = 0.0
            for lo in range(0, n, batch_size):
                idx = order[lo:lo + batch_size]
                fw = nn.Forward(self.store)
                node = fw.input(targets_norm[idx])
                for layer in self._layers:
                    node = layer.apply(fw, node)
                diff = ad.sub(fw.tape, node, latents[idx])
                loss = ad.mean_(fw.tape, ad.mul(fw.tape, diff, diff))
                fw.backward(1.0, output=loss)
                nn.adam_step(opt, self.store)
                total += float(loss.value) * len(idx)
            losses.append(total / n)
        self.trained = True
        return losses


def build_condition(target: PerformanceTriple | np.ndarray, stats: NormStats,
                    guide: GuidanceNet | None) -> ConditionVector:
    """Normalize the target and append the guidance embedding (zeros if none)."""
    if stats is None:
        raise UnfittedStats("condition statistics not fitted")
    arr = target.as_array() if isinstance(target, PerformanceTriple) else np.asarray(target, dtype=np.float64)
    t_norm = stats.apply(arr[None, :])[0]
    if guide is None:
        guidance = np.zeros(GuidanceNet.DIM_OUT)
    else:
        guidance = guide.forward_batch(t_norm[None, :])[0]
    return ConditionVector(target=t_norm, guidance=guidance)


# ---------------------------------------------------------------------------
# denoiser


@dataclass(frozen=True)
class DenoiserConfig:
    dim: int = 21
    width: int = 64
    bottleneck: int = 128
    heads: int = 4
    time_dim: int = 32
    cond_dim: int = 19  # 3 normalized targets + 16 guidance


class DenoiserNet:
    """1-D U-Net over dim tokens: embed -> down x2 -> attention -> up x2 -> head."""

    def __init__(self, config: DenoiserConfig, store: nn.ParamStore, trained: bool = False):
        self.config = config
        self.store = store
        self.trained = trained
        c = config
        self.embed = nn.TokenEmbed("emb", c.dim, c.width)
        self.down1 = _CondBlock("down1", c.width, c.width, c)
        self.down2 = _CondBlock("down2", c.width, c.bottleneck, c)
        self.mid_attn = nn.SelfAttention("mid.attn", c.bottleneck, c.heads)
        self.mid_ln = nn.LayerNorm("mid.ln", c.bottleneck)
        self.up1 = _CondBlock("up1", c.bottleneck + c.bottleneck, c.width, c)
        self.up2 = _CondBlock("up2", c.width + c.width, c.width, c)
        self.head = nn.Dense("head", c.width, 1)
        self._parts = [self.embed, self.down1, self.down2, self.mid_attn,
                       self.mid_ln, self.up1, self.up2, self.head]

    @classmethod
    def create(cls, config: DenoiserConfig = DenoiserConfig(), seed: int = 0) -> "DenoiserNet":
        net = cls(config, nn.ParamStore())
        g = rng(seed, 4003)
        for part in net._parts:
            part.init_params(net.store, g)
        return net

    def forward_nodes(self, fw: nn.Forward, x: np.ndarray, t_emb: np.ndarray,
                      cond: np.ndarray) -> ad.Node:
        """eps estimate for batch x [B, dim], t_emb [B, time_dim], cond [B, cond_dim]."""
        t = fw.tape
        node = self.embed.apply(fw, fw.input(x))          # [B, n, width]
        h1 = self.down1.apply(fw, node, t_emb, cond)      # [B, n, width]
        h2 = self.down2.apply(fw, h1, t_emb, cond)        # [B, n, bottleneck]
        mid = ad.add(t, h2, self.mid_attn.apply(fw, self.mid_ln.apply(fw, h2)))
        u1 = self.up1.apply(fw, ad.concat(t, [mid, h2], axis=-1), t_emb, cond)
        u2 = self.up2.apply(fw, ad.concat(t, [u1, h1], axis=-1), t_emb, cond)
        out = self.head.apply(fw, u2)                     # [B, n, 1]
        return ad.reshape(t, out, (x.shape[0], self.config.dim))

    def eps_batch(self, x: np.ndarray, ts: np.ndarray, cond: np.ndarray) -> np.ndarray:
        t_emb = nn.sinusoidal_embedding_batch(ts, self.config.time_dim)
        fw = nn.Forward(self.store)
        out = self.forward_nodes(fw, x, t_emb, cond)
        return out.value

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"kind": "denoiser", "config": asdict(self.config), "trained": self.trained}
        meta.update(extra_meta or {})
        nn.checkpoint.save(path, self.store, meta)

    @classmethod
    def load(cls, path) -> tuple["DenoiserNet", dict]:
        store, meta = nn.checkpoint.load(path)
        net = cls(DenoiserConfig(**meta["config"]), store, trained=meta["trained"])
        return net, meta


class _CondBlock:
    """dense + SiLU + layer-norm with added time/condition projections."""

    def __init__(self, name: str, dim_in: int, dim_out: int, cfg: DenoiserConfig):
        self.dense = nn.Dense(f"{name}.fc", dim_in, dim_out)
        self.t_proj = nn.Dense(f"{name}.t", cfg.time_dim, dim_out)
        self.c_proj = nn.Dense(f"{name}.c", cfg.cond_dim, dim_out)
        self.norm = nn.LayerNorm(f"{name}.ln", dim_out)

    def init_params(self, store, g):
        for part in (self.dense, self.t_proj, self.c_proj, self.norm):
            part.init_params(store, g)

    def apply(self, fw: nn.Forward, x: ad.Node, t_emb: np.ndarray, cond: np.ndarray) -> ad.Node:
        t = fw.tape
        h = self.dense.apply(fw, x)                                  # [B, n, out]
        te = self.t_proj.apply(fw, fw.input(t_emb))                  # [B, out]
        ce = self.c_proj.apply(fw, fw.input(cond))                   # [B, out]
        bias = ad.reshape(t, ad.add(t, te, ce), (x.value.shape[0], 1, h.value.shape[-1]))
        return self.norm.apply(fw, ad.silu(t, ad.add(t, h, bias)))


# ---------------------------------------------------------------------------
# training and sampling


@dataclass
class DiffusionModel:
    """Denoiser plus everything needed to go from targets to designs."""

    net: DenoiserNet
    schedule: NoiseSchedule
    x_stats: NormStats  # z-score stats of training designs
    cond_stats: NormStats  # range stats of training labels
    guide: GuidanceNet | None
    bounds: Bounds
    seed_lineage: list = field(default_factory=list)

    def condition_for(self, target) -> ConditionVector:
        return build_condition(target, self.cond_stats, self.guide)


def train_epoch(
    data_x: np.ndarray,
    data_cond: np.ndarray,
    net: DenoiserNet,
    s: NoiseSchedule,
    opt: nn.AdamState,
    seed: int,
    batch_size: int = 256,
) -> float:
    """One pass over the data; returns the epoch-mean of ||eps - eps_hat||^2.

    The per-sample loss sums over the design dimension (so an always-zero
    net scores ~dim on unit Gaussian noise); steps t are drawn uniformly
    from {1..T} and the noise from N(0, I), all from the seeded stream.
    """
    g = rng(seed)
    n, dim = data_x.shape
    order = g.permutation(n)
    total = 0.0
    for lo in range(0, n, batch_size):
        idx = order[lo:lo + batch_size]
        xb = data_x[idx]
        cb = data_cond[idx]
        ts = g.integers(1, s.T + 1, size=len(idx))
        eps = g.standard_normal((len(idx), dim))
        ab = s.alpha_bar[ts - 1][:, None]
        xt = np.sqrt(ab) * xb + np.sqrt(1.0 - ab) * eps
        t_emb = nn.sinusoidal_embedding_batch(ts, net.config.time_dim)
        fw = nn.Forward(net.store)
        out = net.forward_nodes(fw, xt, t_emb, cb)
        diff = ad.sub(fw.tape, out, eps)
        per_sample = ad.sum_(fw.tape, ad.mul(fw.tape, diff, diff), axis=1)
        loss = ad.mean_(fw.tape, per_sample)
        fw.backward(1.0, output=loss)
        nn.adam_step(opt, net.store)
        total += float(loss.value) * len(idx)
    net.trained = True
    return total / n


def sample_vectors(
    net: DenoiserNet,
    s: NoiseSchedule,
    cond: np.ndarray,
    n: int,
    seed: int,
) -> np.ndarray:
    """Ancestral sampling of n normalized vectors for condition rows.

    ``cond`` is either one condition row (shared by all samples) or a
    [n, cond_dim] batch. Deterministic for a given seed.
    """
    if not net.trained:
        raise UntrainedNet("denoiser parameters are at initialization")
    if n < 1:
        raise ValueError("n must be >= 1")
    g = rng(seed)
    dim = net.config.dim
    cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
    if cond.shape[0] == 1:
        cond = np.repeat(cond, n, axis=0)
    if cond.shape[0] != n:
        raise ValueError("condition batch size must be 1 or n")
    x = g.standard_normal((n, dim))
    for t in range(s.T, 0, -1):
        eps_hat = net.eps_batch(x, np.full(n, t), cond)
        a_t = s.alpha[t - 1]
        ab_t = s.alpha_bar[t - 1]
        x = (x - ((1.0 - a_t) / np.sqrt(1.0 - ab_t)) * eps_hat) / np.sqrt(a_t)
        if t > 1:
            x = x + s.sigma[t - 1] * g.standard_normal((n, dim))
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue("sampling produced non-finite values")
    return x


def fit_guidance_latents(pooled: np.ndarray, dim_out: int = GuidanceNet.DIM_OUT) -> tuple[np.ndarray, dict]:
    """Whitened top-k principal components of the surrogate's pooled reps.

    Returns per-row latent summaries with ~unit variance per component and
    the projection (mean, components, scales) used to compute them.
    """
    pooled = np.asarray(pooled, dtype=np.float64)
    mean = pooled.mean(axis=0)
    centered = pooled - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    k = min(dim_out, vt.shape[0])
    comps = vt[:k]
    scales = s[:k] / np.sqrt(max(len(pooled) - 1, 1))
    scales = np.where(scales > 0, scales, 1.0)
    latents = (centered @ comps.T) / scales
    if k < dim_out:
        latents = np.pad(latents, ((0, 0), (0, dim_out - k)))
    return latents, {"mean": mean, "components": comps, "scales": scales}


def train_model(
    dataset,
    surrogate_net,
    seed: int = 0,
    epochs: int = 250,
    batch_size: int = 256,
    lr: float = 2e-3,
    schedule: NoiseSchedule | None = None,
    config: DenoiserConfig | None = None,
    use_guidance: bool = True,
    bounds: Bounds | None = None,
    log_every: int = 0,
) -> tuple[DiffusionModel, dict]:
    """Train the full generative stack on an oracle-labelled dataset.

    Fits design/condition statistics, trains the guidance network against
    latent summaries of the surrogate's pooled representation, then runs
    the epsilon-prediction training loop. Deterministic for a given seed.
    """
    s = schedule if schedule is not None else make_schedule()
    x_stats = fit_norm(dataset.inputs, "zscore")
    cond_stats = fit_norm(dataset.labels, "range")
    data_x = x_stats.apply(dataset.inputs)
    targets_norm = cond_stats.apply(dataset.labels)

    guide = None
    if use_guidance:
        pooled = surrogate_net.pooled_repr(dataset.inputs)
        latents, _ = fit_guidance_latents(pooled)
        guide = GuidanceNet.create(seed)
        guide.train(targets_norm, latents, seed)
        guidance = guide.forward_batch(targets_norm)
    else:
        guidance = np.zeros((len(dataset), GuidanceNet.DIM_OUT))
    data_cond = np.concatenate([targets_norm, guidance], axis=1)

    cfg = config if config is not None else DenoiserConfig(cond_dim=data_cond.shape[1])
    net = DenoiserNet.create(cfg, seed)
    opt = nn.AdamState(lr=lr)
    history = {"loss": []}
    t0 = time.monotonic()
    for epoch in range(epochs):
        loss = train_epoch(data_x, data_cond, net, s, opt,
                           seed=int(rng(seed, 4100, epoch).integers(0, 2**63 - 1)),
                           batch_size=batch_size)
        history["loss"].append(loss)
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}/{epochs} loss {loss:.4f}")
        net.store.check_finite()
    history["wall_time_s"] = time.monotonic() - t0
    model = DiffusionModel(
        net=net,
        schedule=s,
        x_stats=x_stats,
        cond_stats=cond_stats,
        guide=guide,
        bounds=bounds if bounds is not None else _bounds_from(dataset),
        seed_lineage=[int(seed)],
    )
    return model, history


def _bounds_from(dataset) -> Bounds:
    from .geometry import default_bounds

    return default_bounds()


def save_model(model: DiffusionModel, path) -> None:
    """Checkpoint the denoiser, guidance net and sidecar metadata together."""
    store = nn.ParamStore()
    for name, v in model.net.store.params.items():
        store.add(f"net.{name}", v)
    if model.guide is not None:
        for name, v in model.guide.store.params.items():
            store.add(f"guidance.{name}", v)
    meta = {
        "kind": "diffusion",
        "config": asdict(model.net.config),
        "trained": model.net.trained,
        "schedule": model.schedule.to_json(),
        "x_stats": model.x_stats.to_json(),
        "cond_stats": model.cond_stats.to_json(),
        "guidance": model.guide is not None,
        "bounds": model.bounds.to_json(),
        "seed_lineage": model.seed_lineage,
    }
    nn.checkpoint.save(path, store, meta)


def load_model(path) -> DiffusionModel:
    store, meta = nn.checkpoint.load(path)
    net_store, guide_store = nn.ParamStore(), nn.ParamStore()
    for name, v in store.params.items():
        if name.startswith("net."):
            net_store.add(name[4:], v)
        elif name.startswith("guidance."):
            guide_store.add(name[9:], v)
    net = DenoiserNet(DenoiserConfig(**meta["config"]), net_store, trained=meta["trained"])
    guide = None
    if meta["guidance"]:
        guide = GuidanceNet(guide_store, trained=True)
    sched_meta = meta["schedule"]
    return DiffusionModel(
        net=net,
        schedule=make_schedule(sched_meta["T"], sched_meta["beta_start"], sched_meta["beta_end"]),
        x_stats=NormStats.from_json(meta["x_stats"]),
        cond_stats=NormStats.from_json(meta["cond_stats"]),
        guide=guide,
        bounds=Bounds.from_json(meta["bounds"]),
        seed_lineage=meta["seed_lineage"],
    )


def sample_designs(
    model: DiffusionModel,
    target,
    n: int,
    seed: int,
) -> tuple[np.ndarray, dict]:
    """n denormalized, bounds-clamped designs for a performance target.

    Returns the [n, 21] design array and a clamp report with the fraction
    of coordinates that hit the bounds (a health metric for how far the
    sampler wandered from the training box).
    """
    cond = model.condition_for(target).concat()
    z = sample_vectors(model.net, model.schedule, cond, n, seed)
    raw = model.x_stats.invert(z)
    clamped = model.bounds.clamp(raw)
    n_clamped = int(np.sum(raw != clamped))
    report = {
        "n": n,
        "clamped_coordinates": n_clamped,
        "clamp_fraction": n_clamped / raw.size,
    }
    return clamped, report
