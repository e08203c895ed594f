"""Deterministic synthetic physics: the project's ground truth.

Design-point performance, a calibrated non-convergence region, a
cantilever-root stress proxy with material substitution, and speedline
performance maps with surge margin. Every response is a smooth function of
the normalized design vector built from seeded coefficient tensors, so the
whole closed loop is reproducible from a single integer seed.

Response construction: each scalar map is ``lo + (hi-lo) * g(z)`` with
``g(z) = 0.5 * (1 + tanh(a·z + z·Bz/21 + b))`` where the entries of ``a``,
``B`` and ``b`` are uniform(-1, 1) draws from a counter-based generator
keyed by (seed, channel); ``B`` is symmetrized and scaled to unit spectral
norm. Non-convergence uses an independent channel: a design fails iff its
failure response exceeds the calibrated threshold.
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import InvalidMaterial, OutOfBounds, UnconvergedBase
from .geometry import BladeParamVector, default_bounds
from .pipeline import Bounds, latin_hypercube
from .rngutil import rng

ORACLE_VERSION = 1

DEFAULT_RANGES = {
    "mass_flow": (13.0, 17.0),
    "pressure_ratio": (1.40, 1.80),
    "efficiency": (0.82, 0.92),
}
DEFAULT_DESIGN_SPEED = 1300.0  # rad/s
TIP_RADIUS = 0.25  # m
BLADE_HEIGHT = 0.10  # m

METRIC_NAMES = ("mass_flow", "pressure_ratio", "efficiency")

# channel tags for the coefficient generator; order is part of the format
_CHANNELS = (
    "mass_flow", "pressure_ratio", "efficiency", "failure",
    "delta_choke", "delta_stall", "rise_stall", "drop_choke",
    "droop_choke", "droop_stall", "walltime",
)


@dataclass(frozen=True)
class PerformanceTriple:
    """Design-point performance: mass flow (kg/s), pressure ratio, efficiency."""

    mass_flow: float
    pressure_ratio: float
    efficiency: float

    def validate(self) -> None:
        if not self.mass_flow > 0:
            raise ValueError("mass_flow must be positive")
        if not self.pressure_ratio > 1:
            raise ValueError("pressure_ratio must exceed 1")
        if not 0 < self.efficiency < 1:
            raise ValueError("efficiency must be in (0, 1)")

    def as_array(self) -> np.ndarray:
        return np.array([self.mass_flow, self.pressure_ratio, self.efficiency])

    def as_dict(self) -> dict:
        return {
            "mass_flow": self.mass_flow,
            "pressure_ratio": self.pressure_ratio,
            "efficiency": self.efficiency,
        }

    @classmethod
    def from_array(cls, a) -> "PerformanceTriple":
        a = np.asarray(a, dtype=np.float64)
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class Material:
    name: str
    young_modulus: float  # Pa
    poisson_ratio: float
    density: float  # kg/m^3
    yield_strength: float  # Pa

    def validate(self) -> None:
        if min(self.young_modulus, self.density, self.yield_strength) <= 0:
            raise InvalidMaterial(f"{self.name}: moduli/density must be positive")
        if not 0 < self.poisson_ratio < 0.5:
            raise InvalidMaterial(f"{self.name}: poisson ratio must be in (0, 0.5)")


def load_materials() -> dict[str, Material]:
    """Material library shipped with the package (illustrative handbook values)."""
    text = resources.files("bladedesk").joinpath("data/materials.json").read_text()
    out = {}
    for entry in json.loads(text)["materials"]:
        m = Material(**entry)
        m.validate()
        out[m.name] = m
    return out


@dataclass
class SimulationResult:
    converged: bool
    performance: PerformanceTriple | None
    residual_trace: list[float]
    wall_time_ms: float

    def as_dict(self) -> dict:
        return {
            "converged": self.converged,
            "performance": None if self.performance is None else self.performance.as_dict(),
            "residual_trace": self.residual_trace,
            "wall_time_ms": self.wall_time_ms,
        }


@dataclass
class PerformanceMap:
    """One speedline: points ordered by decreasing mass flow (choke→stall)."""

    points: np.ndarray  # [n, 3] columns (mass_flow, pressure_ratio, efficiency)
    choke_index: int
    stall_index: int
    design_index: int
    surge_margin: float

    def as_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "choke_index": self.choke_index,
            "stall_index": self.stall_index,
            "design_index": self.design_index,
            "surge_margin": self.surge_margin,
        }


class OracleConfig:
    """Seeded oracle coefficients plus ranges, bounds and failure threshold.

    Regenerating from the same seed reproduces identical coefficients; the
    JSON serialization carries only (seed, version, ranges, threshold,
    bounds, latency), so configs are portable as small documents.
    """

    def __init__(
        self,
        seed: int,
        bounds: Bounds | None = None,
        ranges: dict | None = None,
        theta_fail: float | None = None,
        design_speed: float = DEFAULT_DESIGN_SPEED,
        artificial_latency_s: float = 0.0,
    ):
        self.seed = int(seed)
        self.bounds = bounds if bounds is not None else default_bounds()
        self.ranges = dict(ranges) if ranges is not None else dict(DEFAULT_RANGES)
        self.theta_fail = theta_fail
        self.design_speed = float(design_speed)
        self.artificial_latency_s = float(artificial_latency_s)
        d = self.bounds.dim
        self._coeffs: dict[str, tuple[np.ndarray, np.ndarray, float]] = {}
        for i, channel in enumerate(_CHANNELS):
            g = rng(self.seed, 101, i)
            a = g.uniform(-1.0, 1.0, size=d)
            b_raw = g.uniform(-1.0, 1.0, size=(d, d))
            b_sym = 0.5 * (b_raw + b_raw.T)
            spectral = float(np.linalg.norm(b_sym, ord=2))
            b_mat = b_sym / spectral
            c = float(g.uniform(-1.0, 1.0))
            self._coeffs[channel] = (a, b_mat, c)

    # -- serialization ------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "version": ORACLE_VERSION,
            "seed": self.seed,
            "ranges": {k: list(v) for k, v in self.ranges.items()},
            "theta_fail": self.theta_fail,
            "design_speed": self.design_speed,
            "artificial_latency_s": self.artificial_latency_s,
            "bounds": self.bounds.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "OracleConfig":
        if obj.get("version") != ORACLE_VERSION:
            raise ValueError(f"unsupported oracle version {obj.get('version')!r}")
        return cls(
            seed=obj["seed"],
            bounds=Bounds.from_json(obj["bounds"]),
            ranges={k: tuple(v) for k, v in obj["ranges"].items()},
            theta_fail=obj["theta_fail"],
            design_speed=obj["design_speed"],
            artificial_latency_s=obj.get("artificial_latency_s", 0.0),
        )

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # -- response maps ------------------------------------------------------

    def _response(self, channel: str, z: np.ndarray) -> np.ndarray:
        """g(z) in (0, 1) for a batch of normalized designs [n, d]."""
        a, b_mat, c = self._coeffs[channel]
        u = z @ a + np.einsum("ni,ij,nj->n", z, b_mat, z) / z.shape[1] + c
        return 0.5 * (1.0 + np.tanh(u))

    def _normalize(self, x: np.ndarray) -> np.ndarray:
        return self.bounds.normalize(x)

    def evaluate_batch(self, x: np.ndarray) -> np.ndarray:
        """Label a batch of in-bounds designs; failed rows are NaN."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z = self._normalize(x)
        out = np.empty((x.shape[0], 3), dtype=np.float64)
        for j, name in enumerate(METRIC_NAMES):
            lo, hi = self.ranges[name]
            out[:, j] = lo + (hi - lo) * self._response(name, z)
        if self.theta_fail is not None:
            failed = self._response("failure", z) > self.theta_fail
            out[failed] = np.nan
        return out

    def failure_response(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self._response("failure", self._normalize(x))


def _as_design_array(x) -> np.ndarray:
    if isinstance(x, BladeParamVector):
        return x.flatten()
    return np.asarray(x, dtype=np.float64)


def simulate_design_point(x, cfg: OracleConfig) -> SimulationResult:
    """Design-point evaluation with synthetic convergence behaviour."""
    xa = _as_design_array(x)
    if not cfg.bounds.contains(xa):
        raise OutOfBounds("design outside the configured bounds")
    if cfg.artificial_latency_s > 0:
        time.sleep(cfg.artificial_latency_s)
    z = cfg._normalize(xa[None, :])
    fail_g = float(cfg._response("failure", z)[0])
    converged = cfg.theta_fail is None or fail_g <= cfg.theta_fail
    wall = 500.0 + 400.0 * float(cfg._response("walltime", z)[0])
    # cosmetic residual history for UI parity; carries no physics
    steps = np.arange(40)
    floor = 1e-8 if converged else 3e-2
    trace = np.maximum(np.exp(-steps / (6.0 + 4.0 * fail_g)), floor)
    if converged:
        labels = cfg.evaluate_batch(xa[None, :])[0]
        perf = PerformanceTriple.from_array(labels)
    else:
        perf = None
    return SimulationResult(
        converged=converged,
        performance=perf,
        residual_trace=[float(v) for v in trace],
        wall_time_ms=round(wall, 3),
    )


def stress_analysis(x, material: Material, speed: float) -> float:
    """Cantilever-root stress proxy (Pa): linear in density, quadratic in speed.

    sigma = rho * speed^2 * r_tip * h_blade * k_shape with
    k_shape = (1 + 50*|bend_tip|/chord_tip) * (0.05 / t_max_hub).
    """
    material.validate()
    if speed < 0:
        raise ValueError("speed must be >= 0")
    if isinstance(x, BladeParamVector):
        v = x
    else:
        v = BladeParamVector.unflatten(np.asarray(x, dtype=np.float64))
    v.validate()
    k_shape = (1.0 + 50.0 * abs(v.tip.bend) / v.tip.chord) * (0.05 / v.hub.t_max)
    return material.density * speed * speed * TIP_RADIUS * BLADE_HEIGHT * k_shape


def speedline_map(x, cfg: OracleConfig, n_points: int = 21) -> PerformanceMap:
    """Synthetic speedline anchored at the design point.

    Throttle runs from choke (index 0, maximum flow) to stall (last index);
    pressure ratio rises toward stall and caps there, efficiency peaks at
    the design point. Surge margin uses the cross-ratio definition
    ``(pi_stall * mdot_design) / (pi_design * mdot_stall) - 1``.
    """
    if n_points < 5:
        raise ValueError("n_points must be >= 5")
    base = simulate_design_point(x, cfg)
    if not base.converged:
        raise UnconvergedBase("design point did not converge")
    md, pd, ed = base.performance.as_array()
    z = cfg._normalize(_as_design_array(x)[None, :])

    def channel(name, lo, hi):
        return lo + (hi - lo) * float(cfg._response(name, z)[0])

    delta_c = channel("delta_choke", 0.04, 0.10)
    delta_s = channel("delta_stall", 0.04, 0.10)
    rise_s = channel("rise_stall", 0.02, 0.06)
    drop_c = channel("drop_choke", 0.02, 0.06)
    droop_c = channel("droop_choke", 0.02, 0.05)
    droop_s = channel("droop_stall", 0.02, 0.05)

    lam_d = delta_c / (delta_c + delta_s)
    k = int(np.clip(round(lam_d * (n_points - 1)), 1, n_points - 2))
    lam = np.empty(n_points)
    lam[: k + 1] = lam_d * np.arange(k + 1) / k
    lam[k:] = lam_d + (1.0 - lam_d) * np.arange(n_points - k) / (n_points - 1 - k)

    mdot = md * (1.0 + delta_c - lam * (delta_c + delta_s))
    pi = np.where(
        lam >= lam_d,
        pd * (1.0 + rise_s * np.sin(0.5 * np.pi * (lam - lam_d) / (1.0 - lam_d))),
        pd * (1.0 - drop_c * np.sin(0.5 * np.pi * (lam_d - lam) / lam_d)),
    )
    eta = np.where(
        lam >= lam_d,
        ed * (1.0 - droop_s * ((lam - lam_d) / (1.0 - lam_d)) ** 2),
        ed * (1.0 - droop_c * ((lam_d - lam) / lam_d) ** 2),
    )
    points = np.stack([mdot, pi, eta], axis=1)
    m_stall = md * (1.0 - delta_s)
    pi_stall = pd * (1.0 + rise_s)
    surge_margin = (pi_stall * md) / (pd * m_stall) - 1.0
    return PerformanceMap(
        points=points,
        choke_index=0,
        stall_index=n_points - 1,
        design_index=k,
        surge_margin=float(surge_margin),
    )


def calibrate_failure_threshold(
    cfg: OracleConfig, target_rate: float = 0.05, n_probe: int = 10_000, seed: int = 424242
) -> float:
    """Set the failure threshold to hit ``target_rate`` over an LHS probe.

    theta_fail is the (1 - target_rate) quantile of the failure response
    over ``n_probe`` Latin hypercube samples; the threshold is stored on
    the config and returned.
    """
    if not 0.0 < target_rate < 0.5:
        raise ValueError("target_rate must be in (0, 0.5)")
    probe = latin_hypercube(n_probe, cfg.bounds, seed)
    g = cfg.failure_response(probe)
    theta = float(np.quantile(g, 1.0 - target_rate))
    cfg.theta_fail = theta
    return theta
