"""Blade geometry from the 21-variable parameterization.

A blade is three parameterized sections (hub / mid-span / tip), each with
seven variables: leading- and trailing-edge metal angles, chord, maximum
relative thickness and its chordwise position, and bend/sweep translations.
Sections are 2-D closed profiles built by offsetting a thickness law from a
camber line; the 3-D surface stacks spanwise-interpolated sections on the
centroid stacking line.

Construction choices (the parameterization family itself):

* Camber: cubic Bézier from the origin to ``chord * (cos βm, sin βm)``
  with ``βm = (β1 + β2) / 2``; the interior control points sit at
  ``chord / 3`` along the end-tangent directions, so the start/end tangents
  realize the metal angles exactly. Angles are measured from the axial
  (x) direction, degrees at the interface, radians internally.
* Thickness: half-thickness is a clamped cubic B-spline function of the
  camber arc-length fraction ``s`` with knot vector
  ``[0,0,0,0, t_pos, 1,1,1,1]`` and coefficients
  ``(0, T/2, T/2, T/2, 0)`` — it peaks at exactly ``(t_pos, t_max/2)``
  with zero slope and vanishes at both ends — blended (pointwise max)
  with circular LE/TE rounding arcs of radius ``0.05 * t_max * chord``.
* Profiles are closed counterclockwise: lower surface LE→TE, upper
  surface TE→LE, first point repeated at the end.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace

import numpy as np
from scipy.interpolate import BSpline

from .errors import DegenerateProfile, InvalidParams, UnsupportedFormat
from .pipeline import Bounds

PARAM_FIELDS = ("beta1k", "beta2k", "chord", "t_max", "t_pos", "bend", "sweep")
SECTION_NAMES = ("hub", "mid", "tip")
VAR_NAMES = tuple(f"{s}.{p}" for s in SECTION_NAMES for p in PARAM_FIELDS)

DEFAULT_N_POINTS = 129
DEFAULT_BLADE_HEIGHT = 0.10  # m, hub-to-tip stacking distance

MESH_JSON_VERSION = 1


@dataclass(frozen=True)
class SectionParams:
    """Seven design variables of one blade section.

    beta1k/beta2k in degrees from the axial direction; chord, bend and
    sweep in meters; t_max and t_pos as fractions of chord.
    """

    beta1k: float
    beta2k: float
    chord: float
    t_max: float
    t_pos: float
    bend: float
    sweep: float

    def validate(self) -> None:
        vals = [getattr(self, f) for f in PARAM_FIELDS]
        if not all(np.isfinite(v) for v in vals):
            raise InvalidParams("section parameters must be finite")
        if self.chord <= 0:
            raise InvalidParams(f"chord must be positive, got {self.chord}")
        if not 0 < self.t_max <= 0.25:
            raise InvalidParams(f"t_max must be in (0, 0.25], got {self.t_max}")
        if not 0 < self.t_pos < 1:
            raise InvalidParams(f"t_pos must be in (0, 1), got {self.t_pos}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in PARAM_FIELDS], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "SectionParams":
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (len(PARAM_FIELDS),):
            raise InvalidParams(f"expected {len(PARAM_FIELDS)} values, got shape {a.shape}")
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class BladeParamVector:
    """The 21 design variables: hub, mid and tip sections in order."""

    hub: SectionParams
    mid: SectionParams
    tip: SectionParams

    def validate(self) -> None:
        for s in (self.hub, self.mid, self.tip):
            s.validate()

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.hub.as_array(), self.mid.as_array(), self.tip.as_array()])

    @classmethod
    def unflatten(cls, a) -> "BladeParamVector":
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (21,):
            raise InvalidParams(f"expected 21 values, got shape {a.shape}")
        return cls(
            hub=SectionParams.from_array(a[0:7]),
            mid=SectionParams.from_array(a[7:14]),
            tip=SectionParams.from_array(a[14:21]),
        )

    def section(self, name: str) -> SectionParams:
        return getattr(self, name)


def default_bounds() -> Bounds:
    """Default design box; same seven ranges for each of the three sections."""
    per_section = {
        "beta1k": (30.0, 70.0),
        "beta2k": (20.0, 60.0),
        "chord": (0.04, 0.10),
        "t_max": (0.02, 0.10),
        "t_pos": (0.25, 0.65),
        "bend": (-0.01, 0.01),
        "sweep": (-0.01, 0.01),
    }
    lo = np.array([per_section[p][0] for _ in SECTION_NAMES for p in PARAM_FIELDS])
    hi = np.array([per_section[p][1] for _ in SECTION_NAMES for p in PARAM_FIELDS])
    return Bounds(lo, hi)


@dataclass
class ClosedProfile2D:
    """Closed planar section outline; first point equals the last."""

    points: np.ndarray  # [n, 2] meters
    centroid: np.ndarray  # [2] meters
    stations: int | None = None  # builder metadata: camber stations per side


@dataclass
class BladeSurface:
    """Stacked section outlines; section k sits at z = spans[k] * height."""

    sections: list[ClosedProfile2D]
    spans: np.ndarray
    height: float = DEFAULT_BLADE_HEIGHT


@dataclass
class GeometryReport:
    valid: bool
    violations: list[dict]


# ---------------------------------------------------------------------------
# camber and thickness laws


def _angles_rad(p: SectionParams) -> tuple[float, float, float]:
    b1 = np.deg2rad(p.beta1k)
    b2 = np.deg2rad(p.beta2k)
    return b1, b2, 0.5 * (b1 + b2)


def chord_frame(p: SectionParams) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors along and perpendicular to the section chord."""
    _, _, bm = _angles_rad(p)
    along = np.array([np.cos(bm), np.sin(bm)])
    normal = np.array([-np.sin(bm), np.cos(bm)])
    return along, normal


def _camber_control_points(p: SectionParams) -> np.ndarray:
    b1, b2, bm = _angles_rad(p)
    c = p.chord
    p0 = np.zeros(2)
    p3 = c * np.array([np.cos(bm), np.sin(bm)])
    p1 = p0 + (c / 3.0) * np.array([np.cos(b1), np.sin(b1)])
    p2 = p3 - (c / 3.0) * np.array([np.cos(b2), np.sin(b2)])
    return np.stack([p0, p1, p2, p3])


def camber_points(p: SectionParams, u) -> np.ndarray:
    """Evaluate the camber Bézier at parameter values ``u`` in [0, 1]."""
    cp = _camber_control_points(p)
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))[:, None]
    w = 1.0 - u
    return (
        w ** 3 * cp[0]
        + 3.0 * w ** 2 * u * cp[1]
        + 3.0 * w * u ** 2 * cp[2]
        + u ** 3 * cp[3]
    )


def camber_tangents(p: SectionParams, u) -> np.ndarray:
    cp = _camber_control_points(p)
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))[:, None]
    w = 1.0 - u
    d = 3.0 * (w ** 2 * (cp[1] - cp[0]) + 2.0 * w * u * (cp[2] - cp[1]) + u ** 2 * (cp[3] - cp[2]))
    return d


def half_thickness(p: SectionParams, s) -> np.ndarray:
    """Relative half-thickness at camber arc-length fraction ``s``."""
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    t = p.t_max
    knots = np.array([0.0, 0.0, 0.0, 0.0, p.t_pos, 1.0, 1.0, 1.0, 1.0])
    coeffs = np.array([0.0, 0.5 * t, 0.5 * t, 0.5 * t, 0.0])
    h = BSpline(knots, coeffs, 3)(s)
    r = 0.05 * t  # rounding radius as a fraction of chord
    le = np.sqrt(np.maximum(r * r - (s - r) ** 2, 0.0))
    te = np.sqrt(np.maximum(r * r - (s - (1.0 - r)) ** 2, 0.0))
    return np.maximum(np.maximum(h, le), te)


def _polygon_area_centroid(points: np.ndarray) -> tuple[float, np.ndarray]:
    """Signed shoelace area and area centroid of a closed polygon."""
    x, y = points[:-1, 0], points[:-1, 1]
    xn, yn = points[1:, 0], points[1:, 1]
    cross = x * yn - xn * y
    area = 0.5 * float(np.sum(cross))
    if area == 0.0:
        raise DegenerateProfile("zero enclosed area")
    cx = float(np.sum((x + xn) * cross)) / (6.0 * area)
    cy = float(np.sum((y + yn) * cross)) / (6.0 * area)
    return area, np.array([cx, cy])


def _segment_crossings(points: np.ndarray) -> int:
    """Count properly crossing segment pairs of a closed polyline.

    Shared endpoints and zero-length segments produce zero cross products
    and are therefore never counted, which deliberately tolerates
    duplicated points.
    """
    a1 = points[:-1]
    a2 = points[1:]
    d = a2 - a1

    def cross(v, w):
        return v[..., 0] * w[..., 1] - v[..., 1] * w[..., 0]

    # pairwise: segment i vs segment j
    d1 = cross(d[:, None, :], a1[None, :, :] - a1[:, None, :])
    d2 = cross(d[:, None, :], a2[None, :, :] - a1[:, None, :])
    d3 = cross(d[None, :, :], a1[:, None, :] - a1[None, :, :])
    d4 = cross(d[None, :, :], a2[:, None, :] - a1[None, :, :])
    proper = (d1 * d2 < 0.0) & (d3 * d4 < 0.0)
    iu = np.triu_indices(len(a1), k=1)
    return int(np.count_nonzero(proper[iu]))


# ---------------------------------------------------------------------------
# operations


def build_section_profile(p: SectionParams, n_points: int = DEFAULT_N_POINTS) -> ClosedProfile2D:
    """Build one closed section outline.

    ``n_points`` is the requested outline size; the actual outline has
    ``2*K - 1`` points for ``K = n_points // 2 + 1`` camber stations
    (equal to ``n_points`` when it is odd).
    """
    p.validate()
    if n_points < 64:
        raise InvalidParams(f"n_points must be >= 64, got {n_points}")
    k = n_points // 2 + 1
    u = np.linspace(0.0, 1.0, k)
    camber = camber_points(p, u)
    seg = np.linalg.norm(np.diff(camber, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    s = arc / arc[-1]
    h = half_thickness(p, s) * p.chord
    tang = camber_tangents(p, u)
    tnorm = np.linalg.norm(tang, axis=1, keepdims=True)
    if np.any(tnorm == 0.0):
        raise DegenerateProfile("camber tangent vanished")
    tang = tang / tnorm
    normal = np.stack([-tang[:, 1], tang[:, 0]], axis=1)
    lower = camber - h[:, None] * normal
    upper = camber + h[:, None] * normal
    pts = np.concatenate([lower, upper[-2:0:-1], lower[:1]], axis=0)
    if _segment_crossings(pts) > 0:
        raise DegenerateProfile("thickness envelope self-intersects")
    area, centroid = _polygon_area_centroid(pts)
    if area <= 0.0:
        raise DegenerateProfile("profile orientation collapsed")
    return ClosedProfile2D(points=pts, centroid=centroid, stations=k)


def apply_bend_sweep(profile: ClosedProfile2D, p: SectionParams) -> ClosedProfile2D:
    """Rigid translation: bend along the chord normal, sweep along the chord."""
    along, normal = chord_frame(p)
    shift = p.bend * normal + p.sweep * along
    return ClosedProfile2D(
        points=profile.points + shift,
        centroid=profile.centroid + shift,
        stations=profile.stations,
    )


def _lagrange3(s: float) -> tuple[float, float, float]:
    # quadratic basis through spans 0.0 / 0.5 / 1.0; exact at the knots
    return (
        2.0 * (s - 0.5) * (s - 1.0),
        -4.0 * s * (s - 1.0),
        2.0 * s * (s - 0.5),
    )


def interp_params(v: BladeParamVector, s: float) -> SectionParams:
    """Per-parameter quadratic interpolation through hub/mid/tip at span s."""
    l0, l1, l2 = _lagrange3(s)
    a = l0 * v.hub.as_array() + l1 * v.mid.as_array() + l2 * v.tip.as_array()
    return SectionParams.from_array(a)


def assemble_blade(
    v: BladeParamVector,
    n_span: int = 7,
    n_points: int = DEFAULT_N_POINTS,
    height: float = DEFAULT_BLADE_HEIGHT,
) -> BladeSurface:
    """Build, bend/sweep and stack ``n_span`` sections from hub to tip.

    Intermediate sections take quadratically interpolated parameters;
    all centroids are placed on the quadratic stacking line through the
    bent/swept hub, mid and tip centroids.
    """
    v.validate()
    if n_span < 3:
        raise InvalidParams(f"n_span must be >= 3, got {n_span}")
    control_centroids = []
    for name, s in zip(SECTION_NAMES, (0.0, 0.5, 1.0)):
        params = v.section(name)
        prof = apply_bend_sweep(build_section_profile(params, n_points), params)
        control_centroids.append(prof.centroid)

    spans = np.linspace(0.0, 1.0, n_span)
    sections = []
    for s in spans:
        params = interp_params(v, float(s))
        prof = apply_bend_sweep(build_section_profile(params, n_points), params)
        l0, l1, l2 = _lagrange3(float(s))
        target = l0 * control_centroids[0] + l1 * control_centroids[1] + l2 * control_centroids[2]
        delta = target - prof.centroid
        sections.append(
            ClosedProfile2D(
                points=prof.points + delta,
                centroid=prof.centroid + delta,
                stations=prof.stations,
            )
        )
    return BladeSurface(sections=sections, spans=spans, height=height)


def validate_geometry(b: BladeSurface) -> GeometryReport:
    """Closure, self-intersection, area and thickness checks per section."""
    violations: list[dict] = []
    for idx, sec in enumerate(b.sections):
        pts = sec.points
        if pts.shape[0] < 64:
            violations.append({"check": "point_count", "section": idx, "value": int(pts.shape[0])})
        if not np.array_equal(pts[0], pts[-1]):
            violations.append({"check": "closure", "section": idx,
                               "value": float(np.linalg.norm(pts[0] - pts[-1]))})
        crossings = _segment_crossings(pts)
        if crossings:
            violations.append({"check": "self_intersection", "section": idx, "value": crossings})
        try:
            area, _ = _polygon_area_centroid(pts)
            if area <= 0.0:
                violations.append({"check": "positive_area", "section": idx, "value": area})
        except DegenerateProfile:
            violations.append({"check": "positive_area", "section": idx, "value": 0.0})
        if sec.stations is not None:
            k = sec.stations
            j = np.arange(1, k - 1)
            thickness = np.linalg.norm(pts[2 * k - 2 - j] - pts[j], axis=1)
            if np.any(thickness <= 0.0):
                violations.append({
                    "check": "thickness_positive", "section": idx,
                    "value": float(thickness.min()),
                })
    return GeometryReport(valid=not violations, violations=violations)


# ---------------------------------------------------------------------------
# export


def _mesh_grid(b: BladeSurface) -> np.ndarray:
    n_points = {sec.points.shape[0] for sec in b.sections}
    if len(n_points) != 1:
        raise UnsupportedFormat("sections have differing point counts")
    grid = np.empty((len(b.sections), n_points.pop(), 3), dtype=np.float64)
    for i, (sec, span) in enumerate(zip(b.sections, b.spans)):
        grid[i, :, 0] = sec.points[:, 0]
        grid[i, :, 1] = sec.points[:, 1]
        grid[i, :, 2] = span * b.height
    return grid


def export_geometry(b: BladeSurface, format: str = "mesh-json") -> bytes:
    """Serialize the blade surface; byte-identical for identical inputs."""
    grid = _mesh_grid(b)
    n_span, n_points, _ = grid.shape
    if format == "mesh-json":
        doc = {
            "version": MESH_JSON_VERSION,
            "n_span": int(n_span),
            "n_points": int(n_points),
            "spans": [float(s) for s in b.spans],
            "grid": grid.tolist(),
            "units": "m",
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    if format == "obj":
        lines = ["# bladedesk lofted blade surface"]
        for i in range(n_span):
            for j in range(n_points):
                x, y, z = grid[i, j]
                lines.append(f"v {x!r} {y!r} {z!r}")
        for i in range(n_span - 1):
            for j in range(n_points - 1):
                v00 = i * n_points + j + 1
                v01 = v00 + 1
                v10 = v00 + n_points
                v11 = v10 + 1
                lines.append(f"f {v00} {v01} {v11}")
                lines.append(f"f {v00} {v11} {v10}")
        return ("\n".join(lines) + "\n").encode()
    raise UnsupportedFormat(f"unknown export format {format!r}")


def parse_mesh_json(data: bytes | str) -> dict:
    """Parse a mesh-json export back into arrays (round-trip helper)."""
    doc = json.loads(data)
    doc["grid"] = np.asarray(doc["grid"], dtype=np.float64)
    doc["spans"] = np.asarray(doc["spans"], dtype=np.float64)
    return doc
