"""Directed positional acyclic graphs (DPAGs) and the node label space.

A DPAG is an acyclic digraph where every outgoing edge of a node sits at a
distinct integer position ``1..k``.  Positions may be left empty.  Graphs are
immutable once built; node ids are dense integers assigned in ascending key
order so that insertion order never changes the result.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass
from typing import Any, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CycleDetected,
    DegreeExceeded,
    DuplicateEdge,
    DuplicatePosition,
    EmptyGraph,
    FormatError,
    InvalidPosition,
    MultipleRoots,
    NoSuchEdge,
    UnknownNode,
)

GRAPH_FORMAT_VERSION = "1.0"


class ObjectType(enum.Enum):
    VEHICLE = "vehicle"
    PEDESTRIAN = "pedestrian"
    BICYCLE = "bicycle"


class ColorState(enum.Enum):
    """Dynamic object state colors and their 3-bit codes."""

    YELLOW = "001"
    ORANGE = "011"
    RED = "010"
    CYAN = "110"
    BLUE = "111"
    WHITE = "100"

    @property
    def bits(self) -> tuple[int, int, int]:
        return tuple(int(c) for c in self.value)

    @classmethod
    def from_bits(cls, bits: str) -> "ColorState":
        try:
            return cls(bits)
        except ValueError:
            raise FormatError(f"not a state color code: {bits!r}") from None


def hamming(a: ColorState, b: ColorState) -> int:
    return sum(x != y for x, y in zip(a.value, b.value))


@dataclass(frozen=True)
class NodeLabel:
    """Label of one object at one sampling instant."""

    object_type: ObjectType
    position: tuple[float, float]
    speed: float
    direction: tuple[float, float]
    state_color: ColorState
    knowledge: tuple[int, int, int] = (0, 0, 0)
    frame_index: int = 0

    def __post_init__(self):
        if not self.speed >= 0.0:
            raise ValueError(f"speed must be non-negative, got {self.speed}")
        if self.speed > 0.0:
            norm = float(np.hypot(*self.direction))
            if abs(norm - 1.0) > 1e-9:
                raise ValueError(f"direction must be a unit vector, norm={norm}")
        if len(self.knowledge) != 3 or any(b not in (0, 1) for b in self.knowledge):
            raise ValueError(f"knowledge must be three 0/1 flags, got {self.knowledge}")
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")

    @property
    def knowledge_bits(self) -> str:
        return "".join(str(b) for b in self.knowledge)

    def to_record(self, node_id: int) -> dict:
        return {
            "id": node_id,
            "object_type": self.object_type.value,
            "frame": self.frame_index,
            "position_m": [float(self.position[0]), float(self.position[1])],
            "speed_mps": float(self.speed),
            "direction": [float(self.direction[0]), float(self.direction[1])],
            "color_bits": self.state_color.value,
            "knowledge_bits": self.knowledge_bits,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "NodeLabel":
        try:
            return cls(
                object_type=ObjectType(rec["object_type"]),
                position=(float(rec["position_m"][0]), float(rec["position_m"][1])),
                speed=float(rec["speed_mps"]),
                direction=(float(rec["direction"][0]), float(rec["direction"][1])),
                state_color=ColorState.from_bits(rec["color_bits"]),
                knowledge=tuple(int(c) for c in rec["knowledge_bits"]),
                frame_index=int(rec["frame"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad node record {rec!r}: {exc}") from exc


class Dpag:
    """Immutable k-bounded positional acyclic graph with a single root."""

    __slots__ = ("_labels", "_children", "_parents", "_keys", "k", "max_in_degree", "root", "_topo")

    def __init__(self, labels, children, parents, keys, k, max_in_degree, root, topo):
        self._labels = labels
        self._children = children
        self._parents = parents
        self._keys = keys
        self.k = k
        self.max_in_degree = max_in_degree
        self.root = root
        self._topo = topo

    @classmethod
    def build(
        cls,
        nodes: Mapping[Hashable, Any] | Sequence[tuple[Hashable, Any]],
        edges: Iterable[tuple[Hashable, Hashable, int]],
        k: int,
        i: int,
    ) -> "Dpag":
        """Validate and freeze a graph.

        ``nodes`` maps node keys to labels; ``edges`` holds
        ``(parent_key, child_key, position)`` triples with positions in ``1..k``.
        """
        if k < 1 or i < 1:
            raise ValueError("k and i must be positive")
        items = list(nodes.items()) if isinstance(nodes, Mapping) else list(nodes)
        if not items:
            raise EmptyGraph("a DPAG needs at least one node")
        keys = [key for key, _ in items]
        if len(set(keys)) != len(keys):
            raise ValueError("node keys must be unique")
        order = sorted(range(len(items)), key=lambda j: keys[j])
        sorted_keys = tuple(keys[j] for j in order)
        labels = tuple(items[j][1] for j in order)
        index = {key: n for n, key in enumerate(sorted_keys)}
        n_nodes = len(sorted_keys)

        children: list[list[int | None]] = [[None] * k for _ in range(n_nodes)]
        parents: list[list[int]] = [[] for _ in range(n_nodes)]
        for parent_key, child_key, pos in edges:
            try:
                p, c = index[parent_key], index[child_key]
            except KeyError as exc:
                raise UnknownNode(f"edge references unknown node {exc.args[0]!r}") from None
            if not isinstance(pos, (int, np.integer)) or not 1 <= pos <= k:
                raise InvalidPosition(f"position {pos!r} outside [1, {k}]")
            slot = children[p]
            if slot[pos - 1] is not None:
                raise DuplicatePosition(
                    f"node {parent_key!r} already has a child at position {pos}"
                )
            if c in slot:
                raise DuplicateEdge(f"edge {parent_key!r}->{child_key!r} given twice")
            slot[pos - 1] = c
            parents[c].append(p)

        for v in range(n_nodes):
            if len(parents[v]) > i:
                raise DegreeExceeded(
                    f"node {sorted_keys[v]!r} has in-degree {len(parents[v])} > {i}"
                )

        topo = _kahn(children, parents)
        if topo is None:
            raise CycleDetected("graph contains a directed cycle")
        roots = [v for v in range(n_nodes) if not parents[v]]
        if len(roots) != 1:
            raise MultipleRoots(
                f"expected exactly one node of in-degree 0, found {len(roots)}"
            )
        return cls(
            labels,
            tuple(tuple(s) for s in children),
            tuple(tuple(sorted(p)) for p in parents),
            sorted_keys,
            k,
            i,
            roots[0],
            tuple(topo),
        )

    # -- structure -----------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self._labels)

    def __len__(self) -> int:
        return len(self._labels)

    def key(self, v: int) -> Hashable:
        return self._keys[v]

    def id_of(self, key: Hashable) -> int:
        try:
            return self._keys.index(key)
        except ValueError:
            raise UnknownNode(repr(key)) from None

    def label(self, v: int) -> Any:
        return self._labels[v]

    @property
    def labels(self) -> tuple:
        return self._labels

    def child_slots(self, v: int) -> tuple[int | None, ...]:
        """Length-k tuple, ``None`` where a position is empty."""
        return self._children[v]

    def children(self, v: int) -> list[tuple[int, int]]:
        """Filled ``(position, child)`` pairs in ascending position."""
        return [(s + 1, c) for s, c in enumerate(self._children[v]) if c is not None]

    def parents(self, v: int) -> tuple[int, ...]:
        return self._parents[v]

    def ord(self, parent: int, child: int) -> int:
        """Position (1-based) of ``child`` among the children of ``parent``."""
        for s, c in enumerate(self._children[parent]):
            if c == child:
                return s + 1
        raise NoSuchEdge(f"no edge {parent}->{child}")

    def edges(self) -> list[tuple[int, int, int]]:
        return [(v, c, pos) for v in range(self.n_nodes) for pos, c in self.children(v)]

    def out_degree(self, v: int) -> int:
        return sum(c is not None for c in self._children[v])

    def in_degree(self, v: int) -> int:
        return len(self._parents[v])

    def topological_order(self) -> list[int]:
        """Parents before children; ties broken by ascending id."""
        return list(self._topo)

    def reverse_topological_order(self) -> list[int]:
        return list(reversed(self._topo))

    def heights(self) -> np.ndarray:
        """Longest path (in edges) from each node down to a leaf."""
        h = np.zeros(self.n_nodes, dtype=np.int64)
        for v in reversed(self._topo):
            kids = [c for c in self._children[v] if c is not None]
            if kids:
                h[v] = 1 + max(h[c] for c in kids)
        return h

    def depth(self) -> int:
        """Longest root-to-leaf path measured in edges."""
        return int(self.heights()[self.root])

    def in_skeleton_class(self, i: int, o: int) -> bool:
        return all(
            self.in_degree(v) <= i and self.out_degree(v) <= o for v in range(self.n_nodes)
        )

    def label_matrix(self) -> np.ndarray:
        """Stack numeric labels into an ``(n_nodes, n)`` array."""
        rows = [np.asarray(lab, dtype=np.float64).ravel() for lab in self._labels]
        return np.vstack(rows)

    # -- serialization -------------------------------------------------------

    def to_record(self) -> dict:
        nodes = []
        for v, lab in enumerate(self._labels):
            if isinstance(lab, NodeLabel):
                nodes.append(lab.to_record(v))
            else:
                nodes.append({"id": v, "features": [float(x) for x in np.ravel(lab)]})
        return {
            "k": self.k,
            "i": self.max_in_degree,
            "nodes": nodes,
            "edges": [{"parent": p, "child": c, "pos": pos} for p, c, pos in self.edges()],
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "Dpag":
        try:
            nodes = []
            for node in rec["nodes"]:
                if "features" in node:
                    lab = np.asarray(node["features"], dtype=np.float64)
                else:
                    lab = NodeLabel.from_record(node)
                nodes.append((int(node["id"]), lab))
            edges = [(int(e["parent"]), int(e["child"]), int(e["pos"])) for e in rec["edges"]]
            return cls.build(nodes, edges, int(rec["k"]), int(rec["i"]))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed graph record: {exc}") from exc

    def same_as(self, other: "Dpag") -> bool:
        """Structural and label equality."""
        if (self.k, self.max_in_degree, self.root) != (other.k, other.max_in_degree, other.root):
            return False
        if self._children != other._children or len(self._labels) != len(other._labels):
            return False
        for a, b in zip(self._labels, other._labels):
            if isinstance(a, NodeLabel) or isinstance(b, NodeLabel):
                if a != b:
                    return False
            elif not np.array_equal(np.asarray(a), np.asarray(b)):
                return False
        return True

    def __repr__(self) -> str:
        return f"Dpag(n_nodes={self.n_nodes}, k={self.k}, i={self.max_in_degree}, root={self.root})"


def _kahn(children, parents) -> list[int] | None:
    indeg = [len(p) for p in parents]
    heap = [v for v, d in enumerate(indeg) if d == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        v = heapq.heappop(heap)
        order.append(v)
        for c in children[v]:
            if c is None:
                continue
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, c)
    return order if len(order) == len(indeg) else None


def build(nodes, edges, k: int, i: int) -> Dpag:
    return Dpag.build(nodes, edges, k, i)


def topological_order(dpag: Dpag) -> list[int]:
    return dpag.topological_order()


def reverse_topological_order(dpag: Dpag) -> list[int]:
    return dpag.reverse_topological_order()
