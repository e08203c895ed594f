"""Reward shaping and the optimization loops (LLM-driven, GA, PSO).

All methods optimize over normalized [0,1]^dim coordinates with a
pluggable evaluator (design -> metric values or None on failure) and share
one logging and convergence contract: per-generation logs with a monotone
best-so-far, stopping at the generation budget or when the best-reward
improvement stays below ``eps`` for ``patience`` consecutive generations.

The reward is a weighted objective average minus constraint penalties:
objective values are range-normalized, mapped to [0, 100] scores, averaged
with their weights; each violated constraint subtracts
``weight * 100 * (normalized deviation)``. A failed evaluation scores the
fixed failure penalty (default -1000) with no partial credit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import InvalidRange, MalformedReply, UnknownMetricName
from .llmclient import ChatReply, TokenLedger, fenced, last_fenced_json
from .oracle import PerformanceTriple
from .pipeline import Bounds, latin_hypercube
from .rngutil import rng

MEAN_BOX = (-0.1, 1.1)  # proposals may slightly overshoot the unit box


@dataclass(frozen=True)
class Objective:
    metric: str
    direction: str  # 'maximize' | 'minimize'
    weight: float
    lo: float
    hi: float


@dataclass(frozen=True)
class Constraint:
    metric: str
    kind: str  # 'le' | 'ge' | 'band'
    bound: float | tuple[float, float]
    weight: float
    lo: float  # normalization range for the deviation
    hi: float


@dataclass
class RewardSpec:
    objectives: list[Objective]
    constraints: list[Constraint] = field(default_factory=list)
    failure_penalty: float = -1000.0

    def validate(self) -> None:
        if not self.objectives:
            raise InvalidRange("need at least one objective")
        total_w = sum(o.weight for o in self.objectives)
        if not (np.isfinite(total_w) and total_w > 0):
            raise InvalidRange("objective weights must sum to a positive finite value")
        for item in [*self.objectives, *self.constraints]:
            if not item.hi > item.lo:
                raise InvalidRange(f"{item.metric}: range hi must exceed lo")
            if not np.isfinite(item.weight) or item.weight < 0:
                raise InvalidRange(f"{item.metric}: weight must be finite and >= 0")
        for o in self.objectives:
            if o.direction not in ("maximize", "minimize"):
                raise InvalidRange(f"{o.metric}: unknown direction {o.direction!r}")
        for c in self.constraints:
            if c.kind not in ("le", "ge", "band"):
                raise InvalidRange(f"{c.metric}: unknown constraint kind {c.kind!r}")


@dataclass
class RewardResult:
    reward: float
    scores: dict[str, float]
    penalties: dict[str, float]
    failed: bool

    def as_dict(self) -> dict:
        return {
            "reward": self.reward,
            "scores": self.scores,
            "penalties": self.penalties,
            "failed": self.failed,
        }


def normalize_score(value: float, lo: float, hi: float, direction: str) -> float:
    """Clamp-normalize into [0, 1] and map to a [0, 100] score."""
    if not hi > lo:
        raise InvalidRange("range hi must exceed lo")
    v_hat = min(max((value - lo) / (hi - lo), 0.0), 1.0)
    if direction == "maximize":
        return 100.0 * v_hat
    if direction == "minimize":
        return 100.0 * (1.0 - v_hat)
    raise InvalidRange(f"unknown direction {direction!r}")


def compute_reward(perf, spec: RewardSpec) -> RewardResult:
    """Scalar reward for one evaluation; None/failure maps to the fixed penalty."""
    spec.validate()
    if perf is None:
        return RewardResult(spec.failure_penalty, {}, {}, failed=True)
    if isinstance(perf, PerformanceTriple):
        perf = perf.as_dict()
    scores: dict[str, float] = {}
    weighted = 0.0
    total_w = 0.0
    for o in spec.objectives:
        if o.metric not in perf:
            raise UnknownMetricName(f"objective metric {o.metric!r} missing from evaluation")
        s = normalize_score(float(perf[o.metric]), o.lo, o.hi, o.direction)
        scores[o.metric] = s
        weighted += o.weight * s
        total_w += o.weight
    penalties: dict[str, float] = {}
    penalty_term = 0.0
    for c in spec.constraints:
        if c.metric not in perf:
            raise UnknownMetricName(f"constraint metric {c.metric!r} missing from evaluation")
        value = float(perf[c.metric])
        span = c.hi - c.lo
        if c.kind == "le":
            deviation = max(0.0, value - float(c.bound)) / span
        elif c.kind == "ge":
            deviation = max(0.0, float(c.bound) - value) / span
        else:
            b_lo, b_hi = c.bound
            deviation = max(0.0, b_lo - value, value - b_hi) / span
        p = 100.0 * deviation
        penalties[c.metric] = p
        penalty_term += c.weight * p
    return RewardResult(weighted / total_w - penalty_term, scores, penalties, failed=False)


# ---------------------------------------------------------------------------
# shared loop machinery


@dataclass(frozen=True)
class OptimizerConfig:
    n: int = 20
    g_max: int = 40
    eps: float = 1e-3
    patience: int = 5
    seed: int = 0
    retries: int = 2

    def validate(self) -> None:
        if self.n < 2:
            raise InvalidRange("population must be >= 2")
        if self.g_max < 1:
            raise InvalidRange("g_max must be >= 1")
        if not self.eps > 0:
            raise InvalidRange("eps must be > 0")
        if self.patience < 1:
            raise InvalidRange("patience must be >= 1")


@dataclass
class ProposedMove:
    mean: np.ndarray  # normalized coordinates, in MEAN_BOX
    sigma: float
    rationale: str
    clamped: bool = False
    fallback: bool = False


@dataclass
class GenerationLog:
    generation: int
    sigma: float | None
    candidates: list[dict]
    best_z: list[float]
    best_reward: float
    proposer: dict | None = None

    def as_dict(self) -> dict:
        return {
            "generation": self.generation,
            "sigma": self.sigma,
            "candidates": self.candidates,
            "best_z": self.best_z,
            "best_reward": self.best_reward,
            "proposer": self.proposer,
        }


def logs_to_jsonl(logs: Sequence[GenerationLog]) -> str:
    return "\n".join(json.dumps(g.as_dict(), sort_keys=True) for g in logs) + "\n"


Evaluator = Callable[[np.ndarray], Mapping[str, float] | None]


def _evaluate_population(z_batch: np.ndarray, bounds: Bounds, evaluator: Evaluator,
                         spec: RewardSpec) -> list[dict]:
    out = []
    for z in z_batch:
        x = bounds.denormalize(z)
        perf = evaluator(x)
        r = compute_reward(perf, spec)
        out.append({
            "z": [float(v) for v in z],
            "reward": r.reward,
            "failed": r.failed,
            "scores": r.scores,
            "penalties": r.penalties,
            "metrics": None if perf is None else {k: float(v) for k, v in dict(perf).items()},
        })
    return out


def improvements(logs: Sequence[GenerationLog]) -> list[float]:
    """Best-so-far gains between consecutive logs (len(logs) - 1 values)."""
    return [logs[i].best_reward - logs[i - 1].best_reward for i in range(1, len(logs))]


def converged(logs: Sequence[GenerationLog], eps: float, patience: int) -> bool:
    """True iff the trailing ``patience`` improvements are all below eps.

    Fires at the first log index where the rule holds; callers check after
    each appended generation.
    """
    gains = improvements(logs)
    if len(gains) < patience:
        return False
    return all(g < eps for g in gains[-patience:])


class _RunState:
    def __init__(self, spec: RewardSpec, cfg: OptimizerConfig, bounds: Bounds,
                 evaluator: Evaluator):
        spec.validate()
        cfg.validate()
        self.spec = spec
        self.cfg = cfg
        self.bounds = bounds
        self.evaluator = evaluator
        self.logs: list[GenerationLog] = []
        self.best_z: np.ndarray | None = None
        self.best_reward = -np.inf

    def record(self, generation: int, candidates: list[dict], sigma=None, proposer=None):
        for c in candidates:
            if c["reward"] > self.best_reward:
                self.best_reward = c["reward"]
                self.best_z = np.asarray(c["z"], dtype=np.float64)
        self.logs.append(GenerationLog(
            generation=generation,
            sigma=sigma,
            candidates=candidates,
            best_z=[float(v) for v in self.best_z],
            best_reward=float(self.best_reward),
            proposer=proposer,
        ))

    def done(self) -> bool:
        return converged(self.logs, self.cfg.eps, self.cfg.patience)


# ---------------------------------------------------------------------------
# LLM-driven loop


def _load_template(name: str) -> str:
    return resources.files("bladedesk").joinpath(f"orchestrator/prompts/{name}").read_text()


def render_proposer_prompt(history: Sequence[GenerationLog], spec: RewardSpec,
                           dim: int, template: str | None = None) -> str:
    """Fill the proposer template: design-space text, ranked candidates, state."""
    template = template or _load_template("proposer.txt")
    objective_text = "; ".join(
        f"{o.direction} {o.metric} (weight {o.weight}, range [{o.lo}, {o.hi}])"
        for o in spec.objectives
    )
    constraint_text = "; ".join(
        f"{c.metric} {c.kind} {c.bound} (weight {c.weight})" for c in spec.constraints
    ) or "none"
    if history:
        last = history[-1]
        ranked = sorted(last.candidates, key=lambda c: c["reward"], reverse=True)
        lines = [
            f"  rank {i + 1}: reward {c['reward']:.4f}" for i, c in enumerate(ranked[:8])
        ]
        recent = "\n".join(lines)
        state = {
            "task": "propose",
            "dim": dim,
            "generation": len(history) - 1,
            "candidates": [{"z": c["z"], "reward": c["reward"]} for c in last.candidates],
            "best": {"z": history[-1].best_z, "reward": history[-1].best_reward},
        }
    else:
        recent = "  (no evaluations yet)"
        state = {"task": "propose", "dim": dim, "generation": 0, "candidates": [], "best": None}
    return template.format(
        dim=dim,
        objectives=objective_text,
        constraints=constraint_text,
        recent=recent,
        state=fenced(state),
    )


def parse_proposal(reply_text: str, dim: int) -> ProposedMove:
    """Strict parse of the proposer reply's fenced JSON block."""
    doc = last_fenced_json(reply_text)
    if doc is None:
        raise MalformedReply("no fenced JSON block in reply")
    mean = doc.get("mean")
    sigma = doc.get("sigma")
    if not isinstance(mean, list) or len(mean) != dim:
        raise MalformedReply(f"mean must be a list of {dim} numbers")
    mean_arr = np.asarray(mean, dtype=np.float64)
    if not np.all(np.isfinite(mean_arr)):
        raise MalformedReply("mean contains non-finite values")
    if not isinstance(sigma, (int, float)) or not 0.0 < float(sigma) <= 1.0:
        raise MalformedReply(f"sigma must be in (0, 1], got {sigma!r}")
    rationale = str(doc.get("rationale", ""))
    lo, hi = MEAN_BOX
    clamped = bool(np.any(mean_arr < lo) or np.any(mean_arr > hi))
    if clamped:
        mean_arr = np.clip(mean_arr, lo, hi)
        rationale += " [mean clamped to proposal box]"
    return ProposedMove(mean=mean_arr, sigma=float(sigma), rationale=rationale, clamped=clamped)


def llm_propose(
    history: Sequence[GenerationLog],
    spec: RewardSpec,
    dim: int,
    client,
    retries: int = 2,
    template: str | None = None,
    ledger: TokenLedger | None = None,
    node: str = "optimize",
) -> ProposedMove:
    """Render the prompt, query the client, parse and validate the move.

    After ``retries`` malformed replies, falls back to the best-so-far mean
    with the mock schedule's sigma halved; the fallback is flagged on the
    returned move so logs keep the event.
    """
    prompt = render_proposer_prompt(history, spec, dim, template)
    messages = [{"role": "user", "content": prompt}]
    last_error: Exception | None = None
    for _ in range(retries + 1):
        reply: ChatReply = client.complete(messages)
        if ledger is not None:
            ledger.record(node, reply.prompt_tokens, reply.completion_tokens)
        try:
            return parse_proposal(reply.text, dim)
        except MalformedReply as e:
            last_error = e
    if history and history[-1].best_z is not None:
        mean = np.asarray(history[-1].best_z, dtype=np.float64)
    else:
        mean = np.full(dim, 0.5)
    prev_sigma = next((g.sigma for g in reversed(history) if g.sigma), 0.3)
    return ProposedMove(
        mean=mean,
        sigma=max(prev_sigma / 2.0, 1e-3),
        rationale=f"fallback after malformed replies: {last_error}",
        fallback=True,
    )


def run_llm_optimizer(
    spec: RewardSpec,
    evaluator: Evaluator,
    cfg: OptimizerConfig,
    client,
    bounds: Bounds,
    init_designs: np.ndarray | None = None,
    template: str | None = None,
    ledger: TokenLedger | None = None,
) -> tuple[np.ndarray, list[GenerationLog]]:
    """Gaussian-evolution loop steered by the chat client.

    Generation 0 is a Latin hypercube over the normalized box (plus any
    injected ``init_designs``); each later generation samples the
    population around the proposed mean with the proposed sigma, clamped
    to [0, 1]. Returns the denormalized best design and the full logs.
    """
    session = LlmOptimizerSession(spec, evaluator, cfg, client, bounds,
                                  init_designs=init_designs, template=template, ledger=ledger)
    while session.step():
        pass
    return session.best_design(), session.logs


class LlmOptimizerSession:
    """Stepwise driver for the LLM loop (one generation per ``step``)."""

    def __init__(self, spec, evaluator, cfg: OptimizerConfig, client, bounds: Bounds,
                 init_designs=None, template=None, ledger=None):
        self.state = _RunState(spec, cfg, bounds, evaluator)
        self.client = client
        self.template = template
        self.ledger = ledger
        self.dim = bounds.dim
        z0 = Bounds(np.zeros(self.dim), np.ones(self.dim))
        init = latin_hypercube(cfg.n, z0, rng(cfg.seed, 7000).integers(0, 2**31))
        if init_designs is not None:
            extra = bounds.normalize(np.atleast_2d(init_designs))
            init = np.concatenate([init, np.clip(extra, 0.0, 1.0)], axis=0)
        candidates = _evaluate_population(init, bounds, evaluator, spec)
        self.state.record(0, candidates)
        self._generation = 0

    @property
    def logs(self) -> list[GenerationLog]:
        return self.state.logs

    def finished(self) -> bool:
        return self._generation >= self.state.cfg.g_max or self.state.done()

    def step(self) -> bool:
        """Run one proposal+evaluation generation; False when finished."""
        if self.finished():
            return False
        self._generation += 1
        cfg = self.state.cfg
        move = llm_propose(self.state.logs, self.state.spec, self.dim, self.client,
                           retries=cfg.retries, template=self.template, ledger=self.ledger)
        g = rng(cfg.seed, 7001, self._generation)
        z = move.mean + move.sigma * g.standard_normal((cfg.n, self.dim))
        z = np.clip(z, 0.0, 1.0)
        candidates = _evaluate_population(z, self.state.bounds, self.state.evaluator, self.state.spec)
        self.state.record(
            self._generation, candidates, sigma=move.sigma,
            proposer={"rationale": move.rationale, "clamped": move.clamped, "fallback": move.fallback},
        )
        return not self.finished()

    def best_design(self) -> np.ndarray:
        return self.state.bounds.denormalize(self.state.best_z)


# ---------------------------------------------------------------------------
# GA / PSO baselines


def run_baseline(
    method: str,
    spec: RewardSpec,
    evaluator: Evaluator,
    cfg: OptimizerConfig,
    bounds: Bounds,
    init_designs: np.ndarray | None = None,
) -> tuple[np.ndarray, list[GenerationLog]]:
    """Genetic-algorithm or particle-swarm baseline with the shared contract.

    GA: tournament selection (k=3), SBX crossover (eta 15, rate 0.9),
    polynomial mutation (eta 20, rate 1/dim), elitism 1.
    PSO: inertia 0.7, cognitive/social 1.5/1.5, velocity clamp 0.2 of the
    normalized range, box clamp to [0, 1].
    """
    if method not in ("ga", "pso"):
        raise InvalidRange(f"unknown baseline {method!r}")
    state = _RunState(spec, cfg, bounds, evaluator)
    dim = bounds.dim
    z0 = Bounds(np.zeros(dim), np.ones(dim))
    pop = latin_hypercube(cfg.n, z0, rng(cfg.seed, 7100).integers(0, 2**31))
    if init_designs is not None:
        extra = bounds.normalize(np.atleast_2d(init_designs))
        pop = np.concatenate([pop, np.clip(extra, 0.0, 1.0)], axis=0)[: cfg.n]
    candidates = _evaluate_population(pop, bounds, evaluator, spec)
    state.record(0, candidates)
    rewards = np.array([c["reward"] for c in candidates])

    if method == "pso":
        vel = np.zeros_like(pop)
        pbest = pop.copy()
        pbest_r = rewards.copy()

    for generation in range(1, cfg.g_max + 1):
        if state.done():
            break
        g = rng(cfg.seed, 7101, generation)
        if method == "ga":
            pop, rewards = _ga_generation(pop, rewards, state, g)
        else:
            pop, vel, pbest, pbest_r, rewards = _pso_generation(pop, vel, pbest, pbest_r, state, g)
        state.record(generation, state._last_candidates)
    return bounds.denormalize(state.best_z), state.logs


def _ga_generation(pop, rewards, state: _RunState, g):
    n, dim = pop.shape
    elite = pop[int(np.argmax(rewards))].copy()

    def tournament():
        idx = g.integers(0, n, size=3)
        return pop[idx[np.argmax(rewards[idx])]]

    children = [elite]
    while len(children) < n:
        p1, p2 = tournament(), tournament()
        c1, c2 = _sbx(p1, p2, g, eta=15.0, rate=0.9)
        children.append(_poly_mutate(c1, g, eta=20.0, rate=1.0 / dim))
        if len(children) < n:
            children.append(_poly_mutate(c2, g, eta=20.0, rate=1.0 / dim))
    new_pop = np.clip(np.array(children), 0.0, 1.0)
    candidates = _evaluate_population(new_pop, state.bounds, state.evaluator, state.spec)
    state._last_candidates = candidates
    return new_pop, np.array([c["reward"] for c in candidates])


def _sbx(p1, p2, g, eta: float, rate: float):
    """Simulated binary crossover; per-variable mixing as in NSGA-II."""
    c1, c2 = p1.copy(), p2.copy()
    if g.uniform() < rate:
        cross = g.uniform(size=p1.shape) < 0.5
        u = g.uniform(size=p1.shape)
        beta = np.where(u <= 0.5, (2 * u) ** (1 / (eta + 1)), (1 / (2 * (1 - u))) ** (1 / (eta + 1)))
        mix1 = 0.5 * ((1 + beta) * p1 + (1 - beta) * p2)
        mix2 = 0.5 * ((1 - beta) * p1 + (1 + beta) * p2)
        c1 = np.where(cross, mix1, p1)
        c2 = np.where(cross, mix2, p2)
    return c1, c2


def _poly_mutate(c, g, eta: float, rate: float):
    out = c.copy()
    for j in range(len(out)):
        if g.uniform() < rate:
            u = g.uniform()
            if u < 0.5:
                delta = (2 * u) ** (1 / (eta + 1)) - 1
            else:
                delta = 1 - (2 * (1 - u)) ** (1 / (eta + 1))
            out[j] += delta
    return out


def _pso_generation(pop, vel, pbest, pbest_r, state: _RunState, g):
    inertia, c1, c2, v_clamp = 0.7, 1.5, 1.5, 0.2
    gbest = pbest[int(np.argmax(pbest_r))]
    r1 = g.uniform(size=pop.shape)
    r2 = g.uniform(size=pop.shape)
    vel = inertia * vel + c1 * r1 * (pbest - pop) + c2 * r2 * (gbest - pop)
    vel = np.clip(vel, -v_clamp, v_clamp)
    pop = np.clip(pop + vel, 0.0, 1.0)
    candidates = _evaluate_population(pop, state.bounds, state.evaluator, state.spec)
    rewards = np.array([c["reward"] for c in candidates])
    better = rewards > pbest_r
    pbest[better] = pop[better]
    pbest_r[better] = rewards[better]
    state._last_candidates = candidates
    return pop, vel, pbest, pbest_r, rewards
