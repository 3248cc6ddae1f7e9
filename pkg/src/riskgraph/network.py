"""Recursive neural network over DPAGs.

State transition ``a(v) = tanh(W_f [a(ch_1); ...; a(ch_k); I(v)] + b_f)`` with
empty child positions contributing the zero state, and a one-hidden-layer
output network ``y(v) = sigmoid(w_out . tanh(W_h a(v) + b_h) + b_out)``.

All parameters live in one flat float64 vector, laid out as
``W_f`` (row-major), ``b_f``, ``W_h`` (row-major), ``b_h``, ``w_out``, ``b_out``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dpag import Dpag
from .errors import DimensionMismatch, FormatError

CHECKPOINT_FORMAT_VERSION = "1.0"


@dataclass(frozen=True)
class Architecture:
    state_dim: int
    label_dim: int
    max_out_degree: int
    hidden_dim: int
    output_dim: int = 1

    def __post_init__(self):
        dims = (self.state_dim, self.label_dim, self.max_out_degree, self.hidden_dim)
        if any(d < 1 for d in dims):
            raise ValueError(f"all dimensions must be >= 1, got {dims}")
        if self.output_dim != 1:
            raise ValueError("only scalar outputs are supported")

    @property
    def input_width(self) -> int:
        return self.max_out_degree * self.state_dim + self.label_dim

    @property
    def sizes(self) -> dict[str, int]:
        m, h = self.state_dim, self.hidden_dim
        return {
            "W_f": m * self.input_width,
            "b_f": m,
            "W_h": h * m,
            "b_h": h,
            "w_out": h,
            "b_out": 1,
        }

    @property
    def n_params(self) -> int:
        m, n, k, h = self.state_dim, self.label_dim, self.max_out_degree, self.hidden_dim
        return m * (k * m + n + 1) + h * (m + 1) + (h + 1)

    @property
    def n_transition_params(self) -> int:
        return self.state_dim * (self.input_width + 1)


class Views(NamedTuple):
    W_f: np.ndarray
    b_f: np.ndarray
    W_h: np.ndarray
    b_h: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray


def unpack(vector: np.ndarray, arch: Architecture) -> Views:
    """Reshaped views into a flat parameter (or gradient) vector."""
    if vector.shape != (arch.n_params,):
        raise DimensionMismatch(f"expected {arch.n_params} parameters, got {vector.shape}")
    m, h = arch.state_dim, arch.hidden_dim
    out, start = [], 0
    for name, size in arch.sizes.items():
        out.append(vector[start:start + size])
        start += size
    W_f, b_f, W_h, b_h, w_out, b_out = out
    return Views(W_f.reshape(m, arch.input_width), b_f, W_h.reshape(h, m), b_h, w_out, b_out)


class NetworkParams:
    """Architecture plus flat parameter vector (read-only)."""

    __slots__ = ("arch", "vector", "views")

    def __init__(self, arch: Architecture, vector):
        vec = np.array(vector, dtype=np.float64, copy=True)
        if not np.all(np.isfinite(vec)):
            raise ValueError("parameters must be finite")
        vec.setflags(write=False)
        self.arch = arch
        self.vector = vec
        self.views = unpack(vec, arch)

    def with_vector(self, vector) -> "NetworkParams":
        return NetworkParams(self.arch, vector)

    @classmethod
    def zeros(cls, arch: Architecture) -> "NetworkParams":
        return cls(arch, np.zeros(arch.n_params))

    def __repr__(self) -> str:
        return f"NetworkParams({self.arch}, n={self.vector.size})"


def init_params(arch: Architecture, seed: int) -> NetworkParams:
    """Uniform in +-1/sqrt(fan_in) per layer; zero biases."""
    rng = np.random.default_rng(seed)
    vec = np.zeros(arch.n_params)
    v = unpack(vec, arch)
    for w, fan_in in ((v.W_f, arch.input_width), (v.W_h, arch.state_dim), (v.w_out, arch.hidden_dim)):
        r = 1.0 / np.sqrt(fan_in)
        w[...] = rng.uniform(-r, r, size=w.shape)
    return NetworkParams(arch, vec)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def transition(child_states, label_vec, params: NetworkParams) -> np.ndarray:
    """State of one node from its k ordered child states and its label.

    Pass ``None`` (or a zero vector) for an empty child position.
    """
    arch = params.arch
    m = arch.state_dim
    if len(child_states) != arch.max_out_degree:
        raise DimensionMismatch(f"expected {arch.max_out_degree} child states")
    label_vec = np.asarray(label_vec, dtype=np.float64)
    if label_vec.shape != (arch.label_dim,):
        raise DimensionMismatch(f"label length {label_vec.shape} != {arch.label_dim}")
    parts = []
    for a in child_states:
        a = np.zeros(m) if a is None else np.asarray(a, dtype=np.float64)
        if a.shape != (m,):
            raise DimensionMismatch(f"child state shape {a.shape} != ({m},)")
        parts.append(a)
    x = np.concatenate(parts + [label_vec])
    return np.tanh(params.views.W_f @ x + params.views.b_f)


def output(state, params: NetworkParams) -> float:
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (params.arch.state_dim,):
        raise DimensionMismatch(f"state shape {state.shape} != ({params.arch.state_dim},)")
    v = params.views
    z = np.tanh(v.W_h @ state + v.b_h)
    return float(sigmoid(v.w_out @ z + v.b_out[0]))


def check_compatible(graph: Dpag, features: np.ndarray, arch: Architecture) -> None:
    if graph.k != arch.max_out_degree:
        raise DimensionMismatch(f"graph k={graph.k} but network k={arch.max_out_degree}")
    if features.shape != (graph.n_nodes, arch.label_dim):
        raise DimensionMismatch(
            f"features {features.shape} do not match ({graph.n_nodes}, {arch.label_dim})"
        )


def forward(graph: Dpag, params: NetworkParams, features: np.ndarray | None = None):
    """Evaluate every node state children-first.

    Returns ``(states, root_output)`` where ``states[v]`` is the state of node v.
    ``features`` defaults to the graph's own numeric labels.
    """
    if features is None:
        features = graph.label_matrix()
    check_compatible(graph, features, params.arch)
    m = params.arch.state_dim
    states = np.zeros((graph.n_nodes, m))
    for v in graph.reverse_topological_order():
        kids = [None if c is None else states[c] for c in graph.child_slots(v)]
        states[v] = transition(kids, features[v], params)
    return states, output(states[graph.root], params)


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, params: NetworkParams, seed: int | None = None, epoch: int = 0) -> None:
    a = params.arch
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "m": a.state_dim,
        "n": a.label_dim,
        "k": a.max_out_degree,
        "h": a.hidden_dim,
        "seed": seed,
        "epoch": epoch,
    }
    lines = [json.dumps(header)] + ["%.17g" % x for x in params.vector]
    _atomic_write(path, "\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[NetworkParams, dict]:
    try:
        with open(path) as fh:
            header = json.loads(fh.readline())
            values = [float(line) for line in fh if line.strip()]
    except OSError:
        raise
    except (ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not a checkpoint ({exc})") from exc
    check_version(header.get("format_version"), CHECKPOINT_FORMAT_VERSION, path)
    try:
        arch = Architecture(header["m"], header["n"], header["k"], header["h"])
    except KeyError as exc:
        raise FormatError(f"{path}: header misses {exc}") from exc
    if len(values) != arch.n_params:
        raise FormatError(f"{path}: expected {arch.n_params} values, found {len(values)}")
    return NetworkParams(arch, values), header


def check_version(found, supported: str, source="input") -> None:
    if found is None:
        raise FormatError(f"{source}: missing format_version")
    if str(found).split(".")[0] != supported.split(".")[0]:
        raise FormatError(f"{source}: unsupported format_version {found} (reader is {supported})")


def _atomic_write(path, text: str) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
