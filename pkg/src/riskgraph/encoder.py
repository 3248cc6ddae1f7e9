"""Encoding of sampled intersection scenes as labeled DPAGs.

Geometry is described in an intersection-local frame (origin at the center,
roads along the local axes) placed in the world by ``center`` and
``orientation``.  Every categorical decision (zone, lane, signal arm) is taken
in local coordinates, which makes the structural encoding independent of where
and how the intersection sits in the world.

Graph convention: the root is the host at the newest retained frame.  A host
node's children are the objects it detects at that frame, placed at a
position chosen by object type, and its own previous-frame node at the
right-most position ``k``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .dpag import ColorState, Dpag, NodeLabel, ObjectType
from .errors import ConfigInvalid, EmptyScene, TooManyObjects

SAMPLING_PERIOD = 0.2
RISK_WINDOW = 1.5
BRAKE_DECEL = 6.0
TREND_EPS = 0.05
WRONG_WAY_COS = -0.5
WRONG_WAY_MIN_SPEED = 0.5
LABEL_DIM = 14

ARMS = ("east", "north", "west", "south")
# inbound lanes sit on this side (sign of the lateral local coordinate) for
# right-hand traffic
RIGHT_HAND_LANES = {"east": 1, "west": -1, "north": -1, "south": 1}


class Zone(enum.Enum):
    A = "a"
    B = "b"
    C = "c"
    OUT = "out"


class Trend(enum.Enum):
    DECREASING = "decreasing"
    INCREASING = "increasing"
    UNCHANGED = "unchanged"


class Signal(enum.Enum):
    GREEN = "green"
    AMBER = "amber"
    RED = "red"


Rect = tuple[float, float, float, float]  # xmin, xmax, ymin, ymax (local frame)


def _default_signals() -> dict[str, Signal]:
    return {arm: Signal.GREEN for arm in ARMS}


@dataclass
class IntersectionGeometry:
    """Cross intersection with two-way roads along the local axes.

    Treat instances as read-only after construction.
    """

    center: tuple[float, float] = (0.0, 0.0)
    orientation: float = 0.0
    danger_half_width: float = 5.0
    zone_b_radius: float = 25.0
    zone_a_radius: float = 60.0
    lane_width: float = 3.0
    lanes_per_way: int = 2
    road_half_length: float = 120.0
    driving_area: tuple[Rect, ...] | None = None
    speed_limit: float = 80.0 / 3.6
    signal_state: dict[str, Signal] = field(default_factory=_default_signals)
    lane_direction_map: dict[str, int] = field(default_factory=lambda: dict(RIGHT_HAND_LANES))

    def __post_init__(self):
        self.center = (float(self.center[0]), float(self.center[1]))
        if not 0 < self.danger_half_width < self.zone_b_radius < self.zone_a_radius:
            raise ConfigInvalid("need 0 < danger_half_width < zone_b_radius < zone_a_radius")
        if self.driving_area is None:
            w, L = self.road_half_width, self.road_half_length
            self.driving_area = ((-L, L, -w, w), (-w, w, -L, L))
        self.driving_area = tuple(tuple(float(x) for x in r) for r in self.driving_area)
        self.signal_state = {arm: Signal(s) for arm, s in self.signal_state.items()}
        for arm in ARMS:
            self.signal_state.setdefault(arm, Signal.GREEN)
            if self.lane_direction_map.get(arm) not in (1, -1):
                raise ConfigInvalid(f"lane_direction_map[{arm!r}] must be +1 or -1")
        d = self.danger_half_width
        grid = np.linspace(-d, d, 11)
        if not all(self.contains_local(x, y) for x in grid for y in grid):
            raise ConfigInvalid("driving_area must cover the central danger square")
        c, s = math.cos(self.orientation), math.sin(self.orientation)
        self._rot = np.array([[c, -s], [s, c]])

    @property
    def lane_half_width(self) -> float:
        return self.lane_width / 2.0

    @property
    def road_half_width(self) -> float:
        return self.lanes_per_way * self.lane_width

    def to_local(self, p) -> np.ndarray:
        return self._rot.T @ (np.asarray(p, dtype=np.float64) - self.center)

    def vec_to_local(self, v) -> np.ndarray:
        return self._rot.T @ np.asarray(v, dtype=np.float64)

    def to_world(self, q) -> np.ndarray:
        return self._rot @ np.asarray(q, dtype=np.float64) + self.center

    def vec_to_world(self, v) -> np.ndarray:
        return self._rot @ np.asarray(v, dtype=np.float64)

    def contains_local(self, x: float, y: float) -> bool:
        return any(r[0] <= x <= r[1] and r[2] <= y <= r[3] for r in self.driving_area)

    def in_driving_area(self, p) -> bool:
        x, y = self.to_local(p)
        return self.contains_local(x, y)

    def arm_of(self, p) -> str | None:
        """Approach arm holding ``p``, or None inside the crossing box / off-road."""
        x, y = self.to_local(p)
        w = self.road_half_width
        if abs(y) <= w and abs(x) > w:
            return "east" if x > 0 else "west"
        if abs(x) <= w and abs(y) > w:
            return "north" if y > 0 else "south"
        return None

    def transformed(self, angle: float, translation) -> "IntersectionGeometry":
        """Geometry after a rigid motion (rotation about the origin, then shift)."""
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        center = rot @ np.asarray(self.center) + np.asarray(translation, dtype=np.float64)
        return IntersectionGeometry(
            center=(float(center[0]), float(center[1])),
            orientation=self.orientation + angle,
            danger_half_width=self.danger_half_width,
            zone_b_radius=self.zone_b_radius,
            zone_a_radius=self.zone_a_radius,
            lane_width=self.lane_width,
            lanes_per_way=self.lanes_per_way,
            road_half_length=self.road_half_length,
            driving_area=self.driving_area,
            speed_limit=self.speed_limit,
            signal_state=dict(self.signal_state),
            lane_direction_map=dict(self.lane_direction_map),
        )

    def to_dict(self) -> dict:
        return {
            "center": list(self.center),
            "orientation": self.orientation,
            "danger_half_width": self.danger_half_width,
            "zone_b_radius": self.zone_b_radius,
            "zone_a_radius": self.zone_a_radius,
            "lane_width": self.lane_width,
            "lanes_per_way": self.lanes_per_way,
            "road_half_length": self.road_half_length,
            "driving_area": [list(r) for r in self.driving_area],
            "speed_limit": self.speed_limit,
            "signal_state": {arm: s.value for arm, s in self.signal_state.items()},
            "lane_direction_map": dict(self.lane_direction_map),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any] | None) -> "IntersectionGeometry":
        d = dict(d or {})
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigInvalid(f"unknown geometry fields: {sorted(unknown)}")
        if "center" in d:
            d["center"] = tuple(d["center"])
        if d.get("driving_area") is not None:
            d["driving_area"] = tuple(tuple(r) for r in d["driving_area"])
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"bad geometry: {exc}") from exc


@dataclass(frozen=True)
class ObjectSnapshot:
    object_id: str
    object_type: ObjectType
    position: tuple[float, float]
    speed: float
    direction: tuple[float, float]
    timestamp: float

    def __post_init__(self):
        if not self.speed >= 0:
            raise ValueError("speed must be non-negative")

    def to_dict(self) -> dict:
        return {
            "object_id": self.object_id,
            "object_type": self.object_type.value,
            "position": list(self.position),
            "speed": self.speed,
            "direction": list(self.direction),
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ObjectSnapshot":
        return cls(
            object_id=str(d["object_id"]),
            object_type=ObjectType(d["object_type"]),
            position=(float(d["position"][0]), float(d["position"][1])),
            speed=float(d["speed"]),
            direction=(float(d["direction"][0]), float(d["direction"][1])),
            timestamp=float(d["timestamp"]),
        )


@dataclass(frozen=True)
class SceneFrame:
    timestamp: float
    host: ObjectSnapshot
    detected: tuple[ObjectSnapshot, ...] = ()

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "host": self.host.to_dict(),
            "detected": [o.to_dict() for o in self.detected],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SceneFrame":
        return cls(
            timestamp=float(d["timestamp"]),
            host=ObjectSnapshot.from_dict(d["host"]),
            detected=tuple(ObjectSnapshot.from_dict(o) for o in d.get("detected", ())),
        )


# -- per-snapshot classification --------------------------------------------

def classify_zone(position, geometry: IntersectionGeometry) -> Zone:
    x, y = geometry.to_local(position)
    d = geometry.danger_half_width
    if abs(x) <= d and abs(y) <= d:
        return Zone.C
    r = math.hypot(x, y)
    on_road = geometry.contains_local(x, y)
    if r <= geometry.zone_b_radius and on_road:
        return Zone.B
    if r <= geometry.zone_a_radius and on_road:
        return Zone.A
    return Zone.OUT


def radial_trend(current_position, previous_position, geometry: IntersectionGeometry,
                 eps: float = TREND_EPS) -> Trend:
    c = np.asarray(geometry.center)
    delta = (np.linalg.norm(np.asarray(current_position) - c)
             - np.linalg.norm(np.asarray(previous_position) - c))
    if abs(delta) <= eps:
        return Trend.UNCHANGED
    return Trend.DECREASING if delta < 0 else Trend.INCREASING


def initial_trend(snapshot: ObjectSnapshot, geometry: IntersectionGeometry) -> Trend:
    """Trend when no earlier sample exists: sign of the radial velocity."""
    rel = np.asarray(snapshot.position) - np.asarray(geometry.center)
    radial = float(np.dot(rel, snapshot.direction)) * snapshot.speed
    return Trend.DECREASING if radial < 0 else Trend.INCREASING


_COLOR_TABLE = {
    (Zone.A, Trend.DECREASING): ColorState.YELLOW,
    (Zone.A, Trend.INCREASING): ColorState.BLUE,
    (Zone.B, Trend.DECREASING): ColorState.ORANGE,
    (Zone.B, Trend.INCREASING): ColorState.CYAN,
}


def assign_color(zone: Zone, trend: Trend, previous_color: ColorState | None = None) -> ColorState:
    if zone is Zone.C:
        return ColorState.RED
    if zone is Zone.OUT:
        return ColorState.WHITE
    if trend is Trend.UNCHANGED:
        if previous_color is None:
            raise ValueError("an unchanged trend needs the previous color")
        return previous_color
    return _COLOR_TABLE[zone, trend]


def knowledge_flags(snapshot: ObjectSnapshot, geometry: IntersectionGeometry) -> tuple[int, int, int]:
    """(driving way, traffic light, speed limit) violation flags."""
    x, y = geometry.to_local(snapshot.position)
    heading = geometry.vec_to_local(snapshot.direction)
    arm = geometry.arm_of(snapshot.position)
    wrong_way = light = 0
    if arm is not None and geometry.contains_local(x, y):
        axial, lateral = (x, y) if arm in ("east", "west") else (y, x)
        axis = np.array([1.0, 0.0]) if arm in ("east", "west") else np.array([0.0, 1.0])
        inbound = -math.copysign(1.0, axial) * axis
        on_inbound_side = lateral != 0 and math.copysign(1, lateral) == geometry.lane_direction_map[arm]
        permitted = inbound if on_inbound_side else -inbound
        if (snapshot.speed > WRONG_WAY_MIN_SPEED and lateral != 0
                and float(np.dot(heading, permitted)) < WRONG_WAY_COS):
            wrong_way = 1
        to_line = abs(axial) - geometry.danger_half_width
        approaching = float(np.dot(heading, inbound)) > 0 and snapshot.speed > 0
        if (geometry.signal_state[arm] is not Signal.GREEN and approaching
                and 0 <= to_line < snapshot.speed ** 2 / (2 * BRAKE_DECEL)):
            light = 1
    speeding = int(snapshot.speed > geometry.speed_limit)
    return (wrong_way, light, speeding)


# -- scene encoding ----------------------------------------------------------

def default_type_slots(k: int) -> dict[ObjectType, int]:
    if k < 2:
        raise ConfigInvalid("k must be at least 2 (one remote slot plus the host slot)")
    if k == 2:
        return {t: 1 for t in ObjectType}
    return {
        ObjectType.VEHICLE: 1,
        ObjectType.PEDESTRIAN: 2,
        ObjectType.BICYCLE: min(3, k - 1),
    }


def max_frames(risk_window_s: float, period: float = SAMPLING_PERIOD) -> int:
    return max(1, math.ceil(round(risk_window_s / period, 9)))


def label_scene(frames: Sequence[SceneFrame], geometry: IntersectionGeometry) -> list[dict[str, NodeLabel]]:
    """Label every object of every frame, threading colors through time."""
    prev_pos: dict[str, Any] = {}
    prev_color: dict[str, ColorState] = {}
    out = []
    for frame in frames:
        labels = {}
        for snap in (frame.host, *frame.detected):
            if snap.object_id in prev_pos:
                trend = radial_trend(snap.position, prev_pos[snap.object_id], geometry)
            else:
                trend = initial_trend(snap, geometry)
            zone = classify_zone(snap.position, geometry)
            color = assign_color(zone, trend, prev_color.get(snap.object_id))
            labels[snap.object_id] = NodeLabel(
                object_type=snap.object_type,
                position=snap.position,
                speed=snap.speed,
                direction=snap.direction,
                state_color=color,
                knowledge=knowledge_flags(snap, geometry),
            )
            prev_pos[snap.object_id] = snap.position
            prev_color[snap.object_id] = color
        out.append(labels)
    return out


def encode_scene(
    frames: Sequence[SceneFrame],
    geometry: IntersectionGeometry,
    risk_window_s: float = RISK_WINDOW,
    k: int = 2,
    type_slots: Mapping[ObjectType, int] | None = None,
    period: float = SAMPLING_PERIOD,
) -> Dpag:
    if not frames:
        raise EmptyScene("no frames to encode")
    for a, b in zip(frames, frames[1:]):
        if abs((b.timestamp - a.timestamp) - period) > 1e-6:
            raise ConfigInvalid(
                f"frames must be {period} s apart, got {b.timestamp - a.timestamp:.6f}"
            )
    slots = dict(type_slots) if type_slots is not None else default_type_slots(k)
    if any(not 1 <= s <= k - 1 for s in slots.values()):
        raise ConfigInvalid(f"object slots must lie in [1, {k - 1}]")

    labeled = label_scene(frames, geometry)
    keep = max_frames(risk_window_s, period)
    frames = list(frames)[-keep:]
    labeled = labeled[-keep:]
    n = len(frames)

    nodes: list[tuple[int, NodeLabel]] = []
    edges: list[tuple[int, int, int]] = []
    host_keys = []
    # newest frame first so the root receives id 0
    for j in reversed(range(n)):
        frame, labels = frames[j], labeled[j]
        hk = len(nodes)
        host_keys.append(hk)
        nodes.append((hk, _with_frame(labels[frame.host.object_id], j)))
        used: set[int] = set()
        for snap in frame.detected:
            try:
                pos = slots[snap.object_type]
            except KeyError:
                raise TooManyObjects(f"no slot configured for {snap.object_type.value}") from None
            if pos in used:
                raise TooManyObjects(
                    f"frame {j}: more than one object for child position {pos}"
                )
            used.add(pos)
            ok = len(nodes)
            nodes.append((ok, _with_frame(labels[snap.object_id], j)))
            edges.append((hk, ok, pos))
    for newer, older in zip(host_keys, host_keys[1:]):
        edges.append((newer, older, k))
    return Dpag.build(nodes, edges, k=k, i=1)


def _with_frame(label: NodeLabel, frame_index: int) -> NodeLabel:
    return NodeLabel(
        object_type=label.object_type,
        position=label.position,
        speed=label.speed,
        direction=label.direction,
        state_color=label.state_color,
        knowledge=label.knowledge,
        frame_index=frame_index,
    )


_TYPE_ORDER = (ObjectType.VEHICLE, ObjectType.PEDESTRIAN, ObjectType.BICYCLE)


def label_vector(label: NodeLabel, geometry: IntersectionGeometry) -> np.ndarray:
    """Flatten a label into the 14 network inputs."""
    R = geometry.zone_a_radius
    rel = np.asarray(label.position, dtype=np.float64) - np.asarray(geometry.center)
    dist = float(np.hypot(*rel))
    if dist > R:
        rel = rel * (R / dist)
    vec = np.empty(LABEL_DIM)
    vec[0:2] = rel / R
    vec[2] = label.speed / (2.0 * geometry.speed_limit)
    vec[3:5] = label.direction
    vec[5:8] = label.state_color.bits
    vec[8:11] = label.knowledge
    vec[11:14] = [float(label.object_type is t) for t in _TYPE_ORDER]
    return vec


def feature_matrix(graph: Dpag, geometry: IntersectionGeometry) -> np.ndarray:
    return np.vstack([label_vector(lab, geometry) for lab in graph.labels])
