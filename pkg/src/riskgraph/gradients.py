"""Error and exact gradients through the structure.

``s_gradients`` walks one graph node by node: a children-first pass computes
the states, then a parents-first pass pushes the output deltas down the
edges, each parent handing the child at position r the slice of its
transition Jacobian belonging to that position.  Parameter contributions of
all nodes are summed (weights are shared).

``Batch`` is the same computation compiled over a whole dataset: nodes of all
graphs are grouped by height so every level is a couple of dense matrix
products.  It is what the optimizers call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .dpag import Dpag
from .errors import EmptyDataset
from .network import Architecture, NetworkParams, check_compatible, forward, sigmoid, unpack


@dataclass(frozen=True)
class SupervisedPattern:
    """A graph, its numeric node features, and the root target.

    ``node_targets`` optionally supervises further nodes (node id -> target);
    by default only the root carries a target.
    """

    graph: Dpag
    target: float
    features: np.ndarray = None
    node_targets: Mapping[int, float] | None = field(default=None)

    def __post_init__(self):
        if self.features is None:
            object.__setattr__(self, "features", self.graph.label_matrix())

    def supervised(self) -> list[tuple[int, float]]:
        sup = {self.graph.root: float(self.target)}
        if self.node_targets:
            sup.update({int(v): float(t) for v, t in self.node_targets.items()})
        return sorted(sup.items())


class GradientVector:
    """Gradient aligned with the flat parameter layout."""

    __slots__ = ("arch", "flat")

    def __init__(self, arch: Architecture, flat):
        self.arch = arch
        self.flat = np.asarray(flat, dtype=np.float64)

    @property
    def g_f(self) -> np.ndarray:
        return self.flat[: self.arch.n_transition_params]

    @property
    def g_g(self) -> np.ndarray:
        return self.flat[self.arch.n_transition_params:]

    @property
    def views(self):
        return unpack(self.flat, self.arch)

    def __add__(self, other: "GradientVector") -> "GradientVector":
        return GradientVector(self.arch, self.flat + other.flat)

    def __mul__(self, c: float) -> "GradientVector":
        return GradientVector(self.arch, self.flat * c)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"GradientVector(n={self.flat.size}, norm={np.linalg.norm(self.flat):.3e})"


def _node_output(a, v):
    z = np.tanh(v.W_h @ a + v.b_h)
    return z, float(sigmoid(v.w_out @ z + v.b_out[0]))


def pattern_error(pattern: SupervisedPattern, params: NetworkParams) -> float:
    states, _ = forward(pattern.graph, params, pattern.features)
    v = params.views
    err = 0.0
    for node, t in pattern.supervised():
        _, y = _node_output(states[node], v)
        err += 0.5 * (y - t) ** 2
    return err


def dataset_error(dataset: Iterable[SupervisedPattern], params: NetworkParams) -> float:
    return float(sum(pattern_error(p, params) for p in dataset))


def s_gradients(pattern: SupervisedPattern, params: NetworkParams) -> GradientVector:
    graph, feats = pattern.graph, pattern.features
    arch = params.arch
    check_compatible(graph, feats, arch)
    m = arch.state_dim
    v = params.views

    # children-first: states and the concatenated inputs that produced them
    states = np.zeros((graph.n_nodes, m))
    inputs = np.zeros((graph.n_nodes, arch.input_width))
    for u in graph.reverse_topological_order():
        x = inputs[u]
        for s, c in enumerate(graph.child_slots(u)):
            if c is not None:
                x[s * m:(s + 1) * m] = states[c]
        x[arch.max_out_degree * m:] = feats[u]
        states[u] = np.tanh(v.W_f @ x + v.b_f)

    grad = np.zeros(arch.n_params)
    g = unpack(grad, arch)
    delta_f = np.zeros((graph.n_nodes, m))
    targets = dict(pattern.supervised())

    # parents-first: every parent is finished before its children are reached
    for u in graph.topological_order():
        a = states[u]
        if u in targets:
            z, y = _node_output(a, v)
            delta_g = y - targets[u]
            d_out = delta_g * y * (1.0 - y)
            g.w_out[...] += d_out * z
            g.b_out[...] += d_out
            d_hidden = v.w_out * d_out * (1.0 - z * z)
            g.W_h[...] += np.outer(d_hidden, a)
            g.b_h[...] += d_hidden
            delta_f[u] += v.W_h.T @ d_hidden
        d_pre = delta_f[u] * (1.0 - a * a)
        g.W_f[...] += np.outer(d_pre, inputs[u])
        g.b_f[...] += d_pre
        for pos, c in graph.children(u):
            r = pos - 1
            delta_f[c] += v.W_f[:, r * m:(r + 1) * m].T @ d_pre
    return GradientVector(arch, grad)


def p_gradients(dataset: Sequence[SupervisedPattern], params: NetworkParams,
                batched: bool = False) -> GradientVector:
    """Sum of per-pattern gradients over the whole training set.

    Patterns are visited in the given order; ``batched=True`` evaluates the
    same sum with the compiled level-wise engine.
    """
    if not dataset:
        raise EmptyDataset("cannot compute gradients of an empty dataset")
    if batched:
        _, grad = Batch(dataset, params.arch).error_and_gradient(params.vector)
        return GradientVector(params.arch, grad)
    total = np.zeros(params.arch.n_params)
    for pattern in dataset:
        total += s_gradients(pattern, params).flat
    return GradientVector(params.arch, total)


def finite_difference_gradient(objective, params, h: float = 1e-5):
    """Central differences ``(E(w + h e_j) - E(w - h e_j)) / 2h``.

    ``objective`` is a callable on flat vectors, a pattern, or a sequence of
    patterns; ``params`` a flat vector or NetworkParams to match.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    if isinstance(params, NetworkParams):
        arch, w0 = params.arch, params.vector
        if isinstance(objective, SupervisedPattern):
            pattern = objective
            fun = lambda w: pattern_error(pattern, NetworkParams(arch, w))
        elif callable(objective):
            fun = objective
        else:
            patterns = list(objective)
            fun = lambda w: dataset_error(patterns, NetworkParams(arch, w))
    else:
        arch, w0, fun = None, np.asarray(params, dtype=np.float64), objective
    w = np.array(w0, dtype=np.float64)
    grad = np.empty_like(w)
    for j in range(w.size):
        keep = w[j]
        w[j] = keep + h
        up = fun(w.copy())
        w[j] = keep - h
        down = fun(w.copy())
        w[j] = keep
        grad[j] = (up - down) / (2.0 * h)
    return grad if arch is None else GradientVector(arch, grad)


class Batch:
    """A dataset compiled for level-wise evaluation.

    All graphs are concatenated; empty child positions point at an extra
    all-zero state row.  Nodes are grouped by height (longest path to a leaf),
    which is a valid children-first schedule for every graph at once.
    """

    def __init__(self, patterns: Sequence[SupervisedPattern], arch: Architecture):
        if not patterns:
            raise EmptyDataset("cannot compile an empty dataset")
        self.arch = arch
        k = arch.max_out_degree
        sizes = [p.graph.n_nodes for p in patterns]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        total = int(offsets[-1])
        self.n_nodes = total
        self.nil = total
        children = np.full((total, k), total, dtype=np.int64)
        heights = np.empty(total, dtype=np.int64)
        feats = np.empty((total, arch.label_dim))
        sup_nodes, sup_targets, self.roots = [], [], np.empty(len(patterns), dtype=np.int64)
        for j, p in enumerate(patterns):
            check_compatible(p.graph, p.features, arch)
            off = offsets[j]
            g = p.graph
            for v in range(g.n_nodes):
                for s, c in enumerate(g.child_slots(v)):
                    if c is not None:
                        children[off + v, s] = off + c
            heights[off:off + g.n_nodes] = g.heights()
            feats[off:off + g.n_nodes] = p.features
            self.roots[j] = off + g.root
            for node, t in p.supervised():
                sup_nodes.append(off + node)
                sup_targets.append(t)
        self.children = children
        self.features = feats
        self.levels = [np.flatnonzero(heights == h) for h in range(int(heights.max()) + 1)]
        self.sup_nodes = np.asarray(sup_nodes, dtype=np.int64)
        self.sup_targets = np.asarray(sup_targets, dtype=np.float64)
        self.n_patterns = len(patterns)

    def _states(self, v):
        m, k = self.arch.state_dim, self.arch.max_out_degree
        S = np.zeros((self.n_nodes + 1, m))
        inputs = []
        for idx in self.levels:
            X = np.concatenate(
                [S[self.children[idx, s]] for s in range(k)] + [self.features[idx]], axis=1
            )
            S[idx] = np.tanh(X @ v.W_f.T + v.b_f)
            inputs.append(X)
        return S, inputs

    def states(self, vector) -> np.ndarray:
        v = unpack(np.asarray(vector, dtype=np.float64), self.arch)
        return self._states(v)[0][:-1]

    def root_outputs(self, vector) -> np.ndarray:
        v = unpack(np.asarray(vector, dtype=np.float64), self.arch)
        S, _ = self._states(v)
        Z = np.tanh(S[self.roots] @ v.W_h.T + v.b_h)
        return sigmoid(Z @ v.w_out + v.b_out[0])

    def error(self, vector) -> float:
        v = unpack(np.asarray(vector, dtype=np.float64), self.arch)
        S, _ = self._states(v)
        Z = np.tanh(S[self.sup_nodes] @ v.W_h.T + v.b_h)
        Y = sigmoid(Z @ v.w_out + v.b_out[0])
        return float(0.5 * np.sum((Y - self.sup_targets) ** 2))

    def error_and_gradient(self, vector) -> tuple[float, np.ndarray]:
        arch = self.arch
        m, k = arch.state_dim, arch.max_out_degree
        v = unpack(np.asarray(vector, dtype=np.float64), arch)
        S, inputs = self._states(v)

        A = S[self.sup_nodes]
        Z = np.tanh(A @ v.W_h.T + v.b_h)
        Y = sigmoid(Z @ v.w_out + v.b_out[0])
        resid = Y - self.sup_targets
        err = float(0.5 * np.sum(resid ** 2))

        grad = np.zeros(arch.n_params)
        g = unpack(grad, arch)
        d_out = resid * Y * (1.0 - Y)
        g.w_out[...] = Z.T @ d_out
        g.b_out[...] = d_out.sum()
        d_hidden = np.outer(d_out, v.w_out) * (1.0 - Z * Z)
        g.W_h[...] = d_hidden.T @ A
        g.b_h[...] = d_hidden.sum(axis=0)

        delta = np.zeros((self.n_nodes + 1, m))
        np.add.at(delta, self.sup_nodes, d_hidden @ v.W_h)
        W_children = v.W_f[:, : k * m]
        for idx, X in zip(reversed(self.levels), reversed(inputs)):
            a = S[idx]
            d_pre = delta[idx] * (1.0 - a * a)
            g.W_f[...] += d_pre.T @ X
            g.b_f[...] += d_pre.sum(axis=0)
            back = d_pre @ W_children
            for s in range(k):
                np.add.at(delta, self.children[idx, s], back[:, s * m:(s + 1) * m])
        return err, grad


def make_objective(patterns: Sequence[SupervisedPattern], arch: Architecture) -> tuple[
        Callable[[np.ndarray], float], Callable[[np.ndarray], tuple[float, np.ndarray]]]:
    batch = Batch(patterns, arch)
    return batch.error, batch.error_and_gradient
