"""Simulated intersection traffic and labeled pattern generation.

Trajectories come from noisy kinematic check-points joined by cubic Bezier
segments whose end tangents match the sampled speed and heading.  Vehicle
footprints are oriented rectangles; collisions are found by a separating-axis
test refined at 10 ms between the 200 ms samples.  A teacher rates each
sampled window from collisions and rule violations.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from math import comb
from typing import Any, Mapping, Sequence

import numpy as np

from .dpag import Dpag, ObjectType
from .encoder import (
    RISK_WINDOW,
    SAMPLING_PERIOD,
    IntersectionGeometry,
    ObjectSnapshot,
    SceneFrame,
    Signal,
    encode_scene,
    knowledge_flags,
    max_frames,
)
from .errors import ConfigInvalid, DegenerateCurve

SUBSTEP = 0.01
DEFAULT_HALF_EXTENTS = (2.25, 0.95)  # half length, half width (m)
GAMMA_SHAPE = 9.0
MIN_SEGMENT_SPEED = 0.5


# -- check-points ------------------------------------------------------------

@dataclass(frozen=True)
class CheckPoint:
    mean_position: tuple[float, float]
    mean_speed: float
    mean_direction: tuple[float, float]
    position_spread: float = 0.0
    speed_shape: float | None = GAMMA_SHAPE
    direction_sigma: float = 0.0

    def __post_init__(self):
        if self.position_spread < 0 or self.direction_sigma < 0 or self.mean_speed < 0:
            raise ConfigInvalid("spreads and mean speed must be non-negative")
        if self.speed_shape is not None and self.speed_shape <= 0:
            raise ConfigInvalid("gamma shape must be positive")
        norm = math.hypot(*self.mean_direction)
        if norm == 0:
            raise ConfigInvalid("mean_direction must be non-zero")
        object.__setattr__(self, "mean_direction",
                           (self.mean_direction[0] / norm, self.mean_direction[1] / norm))

    @property
    def speed_scale(self) -> float:
        return self.mean_speed / self.speed_shape

    def to_dict(self) -> dict:
        return {
            "mean_position": list(self.mean_position),
            "mean_speed": self.mean_speed,
            "mean_direction": list(self.mean_direction),
            "position_spread": self.position_spread,
            "speed_shape": self.speed_shape,
            "direction_sigma": self.direction_sigma,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CheckPoint":
        try:
            return cls(
                mean_position=tuple(float(x) for x in d["mean_position"]),
                mean_speed=float(d["mean_speed"]),
                mean_direction=tuple(float(x) for x in d["mean_direction"]),
                position_spread=float(d.get("position_spread", 0.0)),
                speed_shape=d.get("speed_shape", GAMMA_SHAPE),
                direction_sigma=float(d.get("direction_sigma", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid(f"bad check-point {d!r}: {exc}") from exc


@dataclass(frozen=True)
class RealizedCheckPoint:
    position: np.ndarray
    speed: float
    direction: np.ndarray


@dataclass(frozen=True)
class TrajectorySpec:
    object_type: ObjectType
    checkpoints: tuple[CheckPoint, ...]
    duration: float | None = None
    object_id: str = "obj"

    def __post_init__(self):
        if len(self.checkpoints) < 2:
            raise ConfigInvalid("a trajectory needs at least two check-points")
        if self.duration is not None and self.duration <= 0:
            raise ConfigInvalid("duration must be positive")

    def to_dict(self) -> dict:
        return {
            "object_type": self.object_type.value,
            "object_id": self.object_id,
            "duration": self.duration,
            "checkpoints": [c.to_dict() for c in self.checkpoints],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrajectorySpec":
        try:
            return cls(
                object_type=ObjectType(d.get("object_type", "vehicle")),
                checkpoints=tuple(CheckPoint.from_dict(c) for c in d["checkpoints"]),
                duration=d.get("duration"),
                object_id=str(d.get("object_id", "obj")),
            )
        except (KeyError, ValueError) as exc:
            raise ConfigInvalid(f"bad trajectory spec: {exc}") from exc


def sample_checkpoints(spec: TrajectorySpec, rng) -> list[RealizedCheckPoint]:
    """Draw one realization of every check-point.

    Position: symmetric triangular noise per axis.  Speed: gamma with the
    configured shape and mean preserved.  Heading: mean rotated by a normal
    angle.  ``rng`` is a seed or a numpy Generator.
    """
    rng = np.random.default_rng(rng)
    out = []
    for cp in spec.checkpoints:
        pos = np.asarray(cp.mean_position, dtype=np.float64).copy()
        if cp.position_spread > 0:
            pos += rng.triangular(-cp.position_spread, 0.0, cp.position_spread, size=2)
        if cp.speed_shape is None or cp.mean_speed == 0:
            speed = float(cp.mean_speed)
        else:
            speed = float(rng.gamma(cp.speed_shape, cp.speed_scale))
        direction = np.asarray(cp.mean_direction, dtype=np.float64)
        if cp.direction_sigma > 0:
            ang = rng.normal(0.0, cp.direction_sigma)
            c, s = math.cos(ang), math.sin(ang)
            direction = np.array([c * direction[0] - s * direction[1],
                                  s * direction[0] + c * direction[1]])
        out.append(RealizedCheckPoint(pos, speed, direction))
    return out


# -- Bezier curves and trajectories -------------------------------------------

def bezier_point(control_points, u):
    """Bernstein-form evaluation; ``u`` may be an array."""
    P = np.asarray(control_points, dtype=np.float64)
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    n = len(P) - 1
    basis = np.stack([comb(n, i) * u ** i * (1 - u) ** (n - i) for i in range(n + 1)], axis=-1)
    return basis @ P


def bezier_derivative(control_points, u):
    """d/du of the curve."""
    P = np.asarray(control_points, dtype=np.float64)
    n = len(P) - 1
    if n == 0:
        return np.zeros((np.size(u), P.shape[1]))
    return n * bezier_point(P[1:] - P[:-1], u)


@dataclass(frozen=True)
class Segment:
    t0: float
    t1: float
    control_points: np.ndarray


def grid_indices(t_start: float, t_end: float, period: float = SAMPLING_PERIOD) -> range:
    lo = math.ceil(round(t_start / period, 9))
    hi = math.floor(round(t_end / period, 9))
    return range(lo, hi + 1)


class Trajectory:
    """Piecewise-Bezier path in time, sampled on the global 200 ms grid.

    Sample ``j`` sits at time ``j * period``; a trajectory exists only
    between its first and last segment times.
    """

    def __init__(self, segments: Sequence[Segment], object_type=ObjectType.VEHICLE,
                 object_id="obj", period: float = SAMPLING_PERIOD):
        if not segments:
            raise ValueError("trajectory needs at least one segment")
        self.segments = tuple(segments)
        self.object_type = ObjectType(object_type)
        self.object_id = object_id
        self.period = period
        self.start = self.segments[0].t0
        self.end = self.segments[-1].t1
        self.degenerate = all(
            np.allclose(s.control_points, s.control_points[0]) for s in self.segments
        )
        if self.degenerate:
            warnings.warn("all control points coincide; heading defaults to (1, 0)",
                          DegenerateCurve, stacklevel=2)
        self._build_samples()

    def _locate(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        bounds = np.array([s.t1 for s in self.segments])
        idx = np.minimum(np.searchsorted(bounds, t, side="left"), len(self.segments) - 1)
        return t, idx

    def position_at(self, t) -> np.ndarray:
        t, idx = self._locate(t)
        out = np.empty((t.size, 2))
        for j in np.unique(idx):
            seg = self.segments[j]
            mask = idx == j
            u = np.clip((t[mask] - seg.t0) / (seg.t1 - seg.t0), 0.0, 1.0)
            out[mask] = bezier_point(seg.control_points, u)
        return out

    def velocity_at(self, t) -> np.ndarray:
        t, idx = self._locate(t)
        out = np.empty((t.size, 2))
        for j in np.unique(idx):
            seg = self.segments[j]
            mask = idx == j
            u = np.clip((t[mask] - seg.t0) / (seg.t1 - seg.t0), 0.0, 1.0)
            out[mask] = bezier_derivative(seg.control_points, u) / (seg.t1 - seg.t0)
        return out

    def _build_samples(self):
        idx = np.array(grid_indices(self.start, self.end, self.period), dtype=np.int64)
        times = idx * self.period
        pos = self.position_at(times) if idx.size else np.empty((0, 2))
        vel = self.velocity_at(times) if idx.size else np.empty((0, 2))
        speed = np.hypot(vel[:, 0], vel[:, 1])
        heading = np.empty_like(vel)
        last = np.array([1.0, 0.0])
        for j in range(len(idx)):
            if speed[j] > 1e-12:
                last = vel[j] / speed[j]
            else:
                speed[j] = 0.0
            heading[j] = last
        # backfill leading zero-speed samples with the first real heading
        moving = np.flatnonzero(speed > 0)
        if moving.size and moving[0] > 0:
            heading[: moving[0]] = heading[moving[0]]
        self.grid = idx
        self.times = times
        self.positions = pos
        self.speeds = speed
        self.headings = heading
        self._index = {int(j): n for n, j in enumerate(idx)}

    def has_sample(self, j: int) -> bool:
        return j in self._index

    def snapshot(self, j: int) -> ObjectSnapshot:
        n = self._index[j]
        return ObjectSnapshot(
            object_id=self.object_id,
            object_type=self.object_type,
            position=(float(self.positions[n, 0]), float(self.positions[n, 1])),
            speed=float(self.speeds[n]),
            direction=(float(self.headings[n, 0]), float(self.headings[n, 1])),
            timestamp=float(j * self.period),
        )

    @property
    def samples(self) -> list[ObjectSnapshot]:
        return [self.snapshot(int(j)) for j in self.grid]

    def shifted(self, dt: float) -> "Trajectory":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateCurve)
            return Trajectory(
                [Segment(s.t0 + dt, s.t1 + dt, s.control_points) for s in self.segments],
                self.object_type, self.object_id, self.period,
            )

    def time_closest_to(self, point, resolution: float = SUBSTEP) -> float:
        t = np.arange(self.start, self.end + resolution / 2, resolution)
        d = np.linalg.norm(self.position_at(t) - np.asarray(point), axis=1)
        return float(t[int(np.argmin(d))])


def bezier_trajectory(control_points, duration: float, start_time: float = 0.0,
                      object_type=ObjectType.VEHICLE, object_id="obj") -> Trajectory:
    """Single Bezier curve traversed uniformly in its parameter over ``duration``."""
    P = np.asarray(control_points, dtype=np.float64)
    if len(P) < 2:
        raise ConfigInvalid("need at least two control points")
    if duration <= 0:
        raise ConfigInvalid("duration must be positive")
    return Trajectory([Segment(start_time, start_time + duration, P)], object_type, object_id)


def trajectory_from_checkpoints(points: Sequence[RealizedCheckPoint], object_type=ObjectType.VEHICLE,
                                object_id="obj", duration: float | None = None,
                                start_time: float = 0.0) -> Trajectory:
    """Chain cubic Bezier segments through realized check-points.

    Each segment takes ``chord / mean speed`` seconds and its inner control
    points sit a third of the way along the end velocities, so the curve
    leaves and reaches every check-point with the sampled speed and heading.
    ``duration`` rescales the time axis when given.
    """
    spans, ctrl = [], []
    for a, b in zip(points, points[1:]):
        chord = float(np.linalg.norm(b.position - a.position))
        v = max(0.5 * (a.speed + b.speed), MIN_SEGMENT_SPEED)
        T = chord / v if chord > 0 else 1.0
        ctrl.append(np.stack([
            a.position,
            a.position + a.direction * a.speed * T / 3.0,
            b.position - b.direction * b.speed * T / 3.0,
            b.position,
        ]))
        spans.append(T)
    scale = 1.0 if duration is None else duration / sum(spans)
    segs, t = [], start_time
    for T, P in zip(spans, ctrl):
        # stretching time by `scale` keeps the same geometric path
        segs.append(Segment(t, t + T * scale, P))
        t += T * scale
    return Trajectory(segs, object_type, object_id)


# -- collision detection ------------------------------------------------------

def obb_overlap(c1, h1, c2, h2, half_extents=DEFAULT_HALF_EXTENTS, half_extents_b=None):
    """Separating-axis test for batches of oriented rectangles.

    ``c*`` are centers and ``h*`` unit headings, shape (n, 2) or (2,);
    ``half_extents`` is (half length along heading, half width).
    Touching rectangles count as overlapping.
    """
    c1, h1, c2, h2 = (np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in (c1, h1, c2, h2))
    la, wa = half_extents
    lb, wb = half_extents if half_extents_b is None else half_extents_b
    n1 = np.stack([-h1[:, 1], h1[:, 0]], axis=1)
    n2 = np.stack([-h2[:, 1], h2[:, 0]], axis=1)
    d = c2 - c1
    overlap = np.ones(len(d), dtype=bool)
    for axis in (h1, n1, h2, n2):
        ra = la * np.abs(np.sum(h1 * axis, 1)) + wa * np.abs(np.sum(n1 * axis, 1))
        rb = lb * np.abs(np.sum(h2 * axis, 1)) + wb * np.abs(np.sum(n2 * axis, 1))
        overlap &= np.abs(np.sum(d * axis, 1)) <= ra + rb
    return overlap


def _lerp_heading(a, b, s):
    h = (1 - s)[:, None] * a + s[:, None] * b
    norm = np.hypot(h[:, 0], h[:, 1])
    bad = norm < 1e-12
    h[bad] = np.broadcast_to(a, h.shape)[bad] if a.ndim == 1 else a[bad]
    norm[bad] = 1.0
    return h / norm[:, None]


def detect_collision(traj_a: Trajectory, traj_b: Trajectory,
                     half_extents=DEFAULT_HALF_EXTENTS, t_min: float | None = None,
                     t_max: float | None = None, substep: float = SUBSTEP) -> float | None:
    """First time (10 ms resolution) the two footprints overlap, or None.

    Between consecutive common grid samples positions and headings are
    linearly interpolated.  Intervals whose center-distance segment stays
    beyond both circumradii are skipped exactly.
    """
    common = np.intersect1d(traj_a.grid, traj_b.grid)
    if common.size == 0:
        return None
    period = traj_a.period
    lo = -np.inf if t_min is None else t_min - 1e-9
    hi = np.inf if t_max is None else t_max + 1e-9
    ia = np.array([traj_a._index[int(j)] for j in common])
    ib = np.array([traj_b._index[int(j)] for j in common])
    pa, pb = traj_a.positions[ia], traj_b.positions[ib]
    ha, hb = traj_a.headings[ia], traj_b.headings[ib]
    reach = 2.0 * math.hypot(*half_extents)
    n_sub = int(round(period / substep))

    rel = pb - pa
    dist = np.hypot(rel[:, 0], rel[:, 1])
    for n in range(len(common)):
        t0 = common[n] * period
        consecutive = n + 1 < len(common) and common[n + 1] == common[n] + 1
        if not consecutive:
            if lo <= t0 <= hi and dist[n] <= reach and obb_overlap(pa[n], ha[n], pb[n], hb[n], half_extents)[0]:
                return float(t0)
            continue
        if t0 + period < lo or t0 > hi:
            continue
        # minimum distance from the origin to the relative-position segment
        r0, r1 = rel[n], rel[n + 1]
        seg = r1 - r0
        denom = float(seg @ seg)
        s_star = 0.0 if denom == 0 else min(1.0, max(0.0, -float(r0 @ seg) / denom))
        if np.hypot(*(r0 + s_star * seg)) > reach:
            continue
        s = np.arange(n_sub) / n_sub
        times = t0 + s * period
        keep = (times >= lo) & (times <= hi)
        if not keep.any():
            continue
        s, times = s[keep], times[keep]
        ca = pa[n] + s[:, None] * (pa[n + 1] - pa[n])
        cb = pb[n] + s[:, None] * (pb[n + 1] - pb[n])
        hit = obb_overlap(ca, _lerp_heading(ha[n], ha[n + 1], s),
                          cb, _lerp_heading(hb[n], hb[n + 1], s), half_extents)
        if hit.any():
            return float(round(times[int(np.argmax(hit))], 9))
    return None


# -- teacher -----------------------------------------------------------------

@dataclass(frozen=True)
class TeacherConfig:
    w_collision: float = 1.0
    w_knowledge: tuple[float, float, float] = (0.4, 0.6, 0.3)
    collision_horizon: float = RISK_WINDOW

    def __post_init__(self):
        if self.w_collision < 0 or any(w < 0 for w in self.w_knowledge):
            raise ConfigInvalid("teacher weights must be non-negative")
        if len(self.w_knowledge) != 3:
            raise ConfigInvalid("w_knowledge needs three weights")

    def to_dict(self) -> dict:
        return {"w_collision": self.w_collision, "w_knowledge": list(self.w_knowledge),
                "collision_horizon": self.collision_horizon}

    @classmethod
    def from_dict(cls, d) -> "TeacherConfig":
        d = dict(d or {})
        if "w_knowledge" in d:
            d["w_knowledge"] = tuple(float(w) for w in d["w_knowledge"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigInvalid(f"bad teacher config: {exc}") from exc


def collision_within(collision: float | None, t_newest: float, horizon: float) -> bool:
    return collision is not None and abs(collision - t_newest) <= horizon + 1e-9


def teacher_rate(frames: Sequence[SceneFrame], collision: float | None,
                 geometry: IntersectionGeometry, config: TeacherConfig = TeacherConfig()) -> float:
    """Risk in [0, 1]: weighted collision term plus the worst violation term."""
    if not frames:
        return 0.0
    t_newest = frames[-1].timestamp
    hit = collision_within(collision, t_newest, config.collision_horizon)
    w = np.asarray(config.w_knowledge)
    worst = 0.0
    for frame in frames:
        for snap in (frame.host, *frame.detected):
            worst = max(worst, float(w @ np.asarray(knowledge_flags(snap, geometry))))
    return float(min(1.0, max(0.0, config.w_collision * hit + worst)))


# -- scenario configuration ---------------------------------------------------

@dataclass(frozen=True)
class ScenarioTemplate:
    """A host/remote trajectory pair and how pairs are shifted and windowed.

    The remote trajectory is shifted so that both objects reach
    ``conflict_point`` ``arrival_offset``-seconds apart (uniform draw); the
    window ends ``window_end``-seconds (uniform draw) after the host reaches it.
    """

    name: str
    host: TrajectorySpec
    remote: TrajectorySpec
    conflict_point: tuple[float, float]
    arrival_offset: tuple[float, float] = (-1.5, 1.5)
    window_end: tuple[float, float] = (-1.5, 1.5)
    signal_state: Mapping[str, str] | None = None
    weight: float = 1.0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "host": self.host.to_dict(),
            "remote": self.remote.to_dict(),
            "conflict_point": list(self.conflict_point),
            "arrival_offset": list(self.arrival_offset),
            "window_end": list(self.window_end),
            "signal_state": dict(self.signal_state) if self.signal_state else None,
            "weight": self.weight,
        }

    @classmethod
    def from_dict(cls, d) -> "ScenarioTemplate":
        try:
            return cls(
                name=str(d["name"]),
                host=TrajectorySpec.from_dict(d["host"]),
                remote=TrajectorySpec.from_dict(d["remote"]),
                conflict_point=tuple(float(x) for x in d["conflict_point"]),
                arrival_offset=tuple(float(x) for x in d.get("arrival_offset", (-1.5, 1.5))),
                window_end=tuple(float(x) for x in d.get("window_end", (-1.5, 1.5))),
                signal_state=d.get("signal_state"),
                weight=float(d.get("weight", 1.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid(f"bad scenario template: {exc}") from exc


@dataclass(frozen=True)
class ScenarioConfig:
    geometry: IntersectionGeometry
    templates: tuple[ScenarioTemplate, ...]
    teacher: TeacherConfig = TeacherConfig()
    half_extents: tuple[float, float] = DEFAULT_HALF_EXTENTS
    k: int = 2
    risk_window: float = RISK_WINDOW
    count: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.templates:
            raise ConfigInvalid("at least one scenario template is required")
        if any(t.weight < 0 for t in self.templates) or sum(t.weight for t in self.templates) <= 0:
            raise ConfigInvalid("template weights must be non-negative with a positive sum")
        if self.k != 2:
            raise ConfigInvalid("two-object scenes use k = 2")

    def geometry_for(self, template: ScenarioTemplate) -> IntersectionGeometry:
        if not template.signal_state:
            return self.geometry
        signals = dict(self.geometry.signal_state)
        signals.update({arm: Signal(s) for arm, s in template.signal_state.items()})
        return replace(self.geometry, signal_state=signals)

    def to_dict(self) -> dict:
        return {
            "geometry": self.geometry.to_dict(),
            "templates": [t.to_dict() for t in self.templates],
            "teacher": self.teacher.to_dict(),
            "half_extents": list(self.half_extents),
            "k": self.k,
            "risk_window": self.risk_window,
            "count": self.count,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScenarioConfig":
        d = dict(d)
        base = default_scenario_config()
        try:
            templates = d.get("templates")
            return cls(
                geometry=IntersectionGeometry.from_dict(d["geometry"]) if "geometry" in d else base.geometry,
                templates=tuple(ScenarioTemplate.from_dict(t) for t in templates)
                if templates is not None else base.templates,
                teacher=TeacherConfig.from_dict(d.get("teacher")),
                half_extents=tuple(float(x) for x in d.get("half_extents", DEFAULT_HALF_EXTENTS)),
                k=int(d.get("k", 2)),
                risk_window=float(d.get("risk_window", RISK_WINDOW)),
                count=int(d.get("count", 1000)),
                seed=int(d.get("seed", 0)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"bad scenario config: {exc}") from exc


def _cp(pos, speed, direction, spread=0.25, sigma=0.015, shape=GAMMA_SHAPE):
    return CheckPoint(pos, speed, direction, spread, shape, sigma)


def left_turn_template() -> ScenarioTemplate:
    """Host turns left from the south arm across an oncoming straight remote."""
    host = TrajectorySpec(ObjectType.VEHICLE, (
        _cp((1.5, -55.0), 13.0, (0, 1)),
        _cp((1.5, -8.0), 9.0, (0, 1)),
        _cp((-8.0, 1.5), 9.0, (-1, 0)),
        _cp((-55.0, 1.5), 13.0, (-1, 0)),
    ), object_id="host")
    remote = TrajectorySpec(ObjectType.VEHICLE, (
        _cp((-1.5, 60.0), 14.0, (0, -1)),
        _cp((-1.5, 8.0), 14.0, (0, -1)),
        _cp((-1.5, -60.0), 14.0, (0, -1)),
    ), object_id="remote")
    return ScenarioTemplate("left_turn_across_path", host, remote, conflict_point=(-1.5, -1.0))


def traffic_light_template() -> ScenarioTemplate:
    """Host crosses on green; the remote crosses from the left against red."""
    host = TrajectorySpec(ObjectType.VEHICLE, (
        _cp((1.5, -55.0), 14.0, (0, 1)),
        _cp((1.5, 0.0), 14.0, (0, 1)),
        _cp((1.5, 55.0), 14.0, (0, 1)),
    ), object_id="host")
    remote = TrajectorySpec(ObjectType.VEHICLE, (
        _cp((-60.0, -1.5), 14.0, (1, 0)),
        _cp((0.0, -1.5), 14.0, (1, 0)),
        _cp((60.0, -1.5), 14.0, (1, 0)),
    ), object_id="remote")
    signals = {"south": "green", "north": "green", "west": "red", "east": "red"}
    return ScenarioTemplate("traffic_light", host, remote, conflict_point=(1.5, -1.5),
                            signal_state=signals)


def default_scenario_config() -> ScenarioConfig:
    return ScenarioConfig(
        geometry=IntersectionGeometry(),
        templates=(left_turn_template(), traffic_light_template()),
    )


# -- pattern generation --------------------------------------------------------

@dataclass
class GeneratedPattern:
    index: int
    graph: Dpag
    target: float
    collision: bool
    shift_s: float
    template: str
    collision_time: float | None = None
    t_newest: float = 0.0

    def to_record(self) -> dict:
        rec = self.graph.to_record()
        rec.update({
            "index": self.index,
            "target": self.target,
            "collision": self.collision,
            "shift_s": self.shift_s,
            "template": self.template,
            "collision_time": self.collision_time,
            "t_newest": self.t_newest,
        })
        return rec

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "GeneratedPattern":
        return cls(
            index=int(rec.get("index", 0)),
            graph=Dpag.from_record(rec),
            target=float(rec["target"]),
            collision=bool(rec["collision"]),
            shift_s=float(rec.get("shift_s", 0.0)),
            template=str(rec.get("template", "")),
            collision_time=rec.get("collision_time"),
            t_newest=float(rec.get("t_newest", 0.0)),
        )


@dataclass
class PatternSet:
    patterns: list[GeneratedPattern]
    geometry: IntersectionGeometry
    seed: int | None = None
    config: dict | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.patterns)

    def __iter__(self):
        return iter(self.patterns)

    @property
    def collision_fraction(self) -> float:
        return sum(p.collision for p in self.patterns) / max(1, len(self.patterns))

    def subset(self, indices) -> "PatternSet":
        return PatternSet([self.patterns[i] for i in indices], self.geometry, self.seed, self.config)


def _scene_frames(host: Trajectory, remote: Trajectory, j_end: int,
                  geometry: IntersectionGeometry) -> list[SceneFrame]:
    frames = []
    for j in host.grid:
        if j > j_end:
            break
        h = host.snapshot(int(j))
        detected = ()
        if remote.has_sample(int(j)):
            r = remote.snapshot(int(j))
            if math.dist(r.position, h.position) <= geometry.zone_a_radius:
                detected = (r,)
        frames.append(SceneFrame(h.timestamp, h, detected))
    return frames


def generate_pattern(config: ScenarioConfig, seed: int, index: int = 0) -> GeneratedPattern:
    rng = np.random.default_rng(seed)
    weights = np.array([t.weight for t in config.templates], dtype=np.float64)
    template = config.templates[int(rng.choice(len(weights), p=weights / weights.sum()))]
    geometry = config.geometry_for(template)

    host = trajectory_from_checkpoints(
        _to_world(sample_checkpoints(template.host, rng), config.geometry),
        template.host.object_type, "host", template.host.duration)
    remote = trajectory_from_checkpoints(
        _to_world(sample_checkpoints(template.remote, rng), config.geometry),
        template.remote.object_type, "remote", template.remote.duration)
    conflict = config.geometry.to_world(template.conflict_point)
    t_host = host.time_closest_to(conflict)
    shift = t_host - remote.time_closest_to(conflict) + rng.uniform(*template.arrival_offset)
    remote = remote.shifted(shift)

    t_end = t_host + rng.uniform(*template.window_end)
    j_end = int(np.clip(round(t_end / host.period), host.grid[0], host.grid[-1]))
    frames = _scene_frames(host, remote, j_end, geometry)
    graph = encode_scene(frames, geometry, config.risk_window, k=config.k)

    keep = max_frames(config.risk_window, host.period)
    t_new = frames[-1].timestamp
    horizon = config.teacher.collision_horizon
    hit = detect_collision(host, remote, config.half_extents, t_new - horizon, t_new + horizon)
    target = teacher_rate(frames[-keep:], hit, geometry, config.teacher)
    return GeneratedPattern(index, graph, target, collision_within(hit, t_new, horizon),
                            float(shift), template.name, hit, t_new)


def _to_world(points, geometry: IntersectionGeometry):
    return [RealizedCheckPoint(geometry.to_world(p.position), p.speed, geometry.vec_to_world(p.direction))
            for p in points]


def resolve_workers(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("RISKGRAPH_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigInvalid(f"RISKGRAPH_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _generate_chunk(args):
    config, seed, indices = args
    return [generate_pattern(config, seed + i, i) for i in indices]


def generate_pattern_set(config: ScenarioConfig, count: int | None = None, seed: int | None = None,
                         workers: int | None = None) -> PatternSet:
    """Generate ``count`` labeled patterns; pattern i uses seed ``seed + i``.

    Output is ordered by index and identical for any number of workers.
    """
    count = config.count if count is None else count
    seed = config.seed if seed is None else seed
    if count < 0:
        raise ConfigInvalid("count must be non-negative")
    n_workers = min(resolve_workers(workers), max(1, count // 100))
    if n_workers <= 1:
        patterns = [generate_pattern(config, seed + i, i) for i in range(count)]
    else:
        chunks = [(config, seed, list(range(w, count, n_workers))) for w in range(n_workers)]
        with ProcessPoolExecutor(n_workers) as pool:
            results = list(pool.map(_generate_chunk, chunks))
        patterns = sorted((p for chunk in results for p in chunk), key=lambda p: p.index)
    return PatternSet(patterns, config.geometry, seed, config.to_dict())
