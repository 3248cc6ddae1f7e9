import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _cases import perturbed_params, random_tree
from riskgraph.dpag import Dpag
from riskgraph.errors import DimensionMismatch, FormatError
from riskgraph.network import (
    Architecture,
    NetworkParams,
    forward,
    init_params,
    load_checkpoint,
    output,
    save_checkpoint,
    transition,
    unpack,
)


def recursive_root_state(graph, v, W_f, b_f, m):
    """Plain top-down recursion, no ordering and no memoization."""
    parts = []
    for c in graph.child_slots(v):
        parts.append(np.zeros(m) if c is None else recursive_root_state(graph, c, W_f, b_f, m))
    x = np.concatenate(parts + [np.asarray(graph.label(v), dtype=float)])
    return np.tanh(W_f @ x + b_f)


def logistic(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestArchitecture:
    def test_published_size(self):
        arch = Architecture(state_dim=23, label_dim=14, max_out_degree=2, hidden_dim=160)
        assert arch.n_params == 23 * (2 * 23 + 14 + 1) + 160 * 24 + 161 == 5404
        assert sum(arch.sizes.values()) == 5404

    def test_invalid(self):
        with pytest.raises(ValueError):
            Architecture(0, 1, 1, 1)
        with pytest.raises(ValueError):
            Architecture(1, 1, 1, 1, output_dim=2)

    def test_layout(self):
        arch = Architecture(2, 3, 2, 4)
        vec = np.arange(arch.n_params, dtype=float)
        v = unpack(vec, arch)
        assert v.W_f.shape == (2, 7) and v.W_f[1, 0] == 7
        assert v.b_f[0] == 14
        assert v.W_h.shape == (4, 2) and v.W_h[0, 1] == 17
        assert v.b_h[0] == 24 and v.w_out[0] == 28 and v.b_out[0] == 32


class TestTransition:
    def test_hand_value(self):
        arch = Architecture(1, 1, 1, 1)
        vec = np.zeros(arch.n_params)
        unpack(vec, arch).W_f[...] = [[0.5, 0.5]]
        a = transition([np.array([0.2])], [0.6], NetworkParams(arch, vec))
        np.testing.assert_allclose(a, [math.tanh(0.4)], rtol=1e-15)
        assert a[0] == pytest.approx(0.379949, abs=1e-6)

    def test_zero_weights(self):
        arch = Architecture(3, 2, 2, 2)
        a = transition([np.ones(3), None], [5.0, -1.0], NetworkParams.zeros(arch))
        np.testing.assert_array_equal(a, np.zeros(3))

    def test_leaf_depends_on_label_columns_only(self):
        arch = Architecture(3, 2, 2, 2)
        p = perturbed_params(arch, np.random.default_rng(0))
        v = p.views
        a = transition([None, None], [0.3, -0.2], p)
        np.testing.assert_allclose(a, np.tanh(v.W_f[:, 6:] @ [0.3, -0.2] + v.b_f), rtol=1e-15)
        vec = p.vector.copy()
        unpack(vec, arch).W_f[:, :6] = 99.0
        np.testing.assert_array_equal(transition([None, None], [0.3, -0.2], p.with_vector(vec)), a)

    def test_dimension_checks(self):
        p = NetworkParams.zeros(Architecture(3, 2, 2, 2))
        with pytest.raises(DimensionMismatch):
            transition([None], [0.0, 0.0], p)
        with pytest.raises(DimensionMismatch):
            transition([None, None], [0.0], p)
        with pytest.raises(DimensionMismatch):
            transition([np.zeros(2), None], [0.0, 0.0], p)
        with pytest.raises(DimensionMismatch):
            output(np.zeros(2), p)


class TestOutput:
    def test_zero_network(self):
        assert output(np.zeros(3), NetworkParams.zeros(Architecture(3, 2, 2, 4))) == 0.5

    def test_unit_weights_on_zero_state(self):
        arch = Architecture(1, 1, 1, 1)
        vec = np.zeros(arch.n_params)
        v = unpack(vec, arch)
        v.W_h[...] = 1.0
        v.w_out[...] = 1.0
        assert output([0.0], NetworkParams(arch, vec)) == 0.5

    def test_large_bias(self):
        arch = Architecture(2, 1, 1, 3)
        vec = np.zeros(arch.n_params)
        unpack(vec, arch).b_out[...] = 10.0
        y = output(np.zeros(2), NetworkParams(arch, vec))
        assert y == pytest.approx(logistic(10.0), rel=1e-14)
        assert y == pytest.approx(0.9999546, abs=1e-7)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.1, 5.0))
    def test_range(self, seed, scale):
        rng = np.random.default_rng(seed)
        arch = Architecture(3, 2, 2, 3)
        p = NetworkParams(arch, rng.uniform(-scale, scale, size=arch.n_params))
        y = output(rng.uniform(-1, 1, size=3), p)
        assert 0.0 < y < 1.0


class TestForward:
    def test_single_node_zero_params(self):
        g = Dpag.build({0: np.array([0.3, 0.1])}, [], k=2, i=1)
        states, y = forward(g, NetworkParams.zeros(Architecture(4, 2, 2, 3)))
        np.testing.assert_array_equal(states, np.zeros((1, 4)))
        assert y == 0.5

    @pytest.mark.parametrize("depth", [1, 3, 8])
    def test_chain_zero_params(self, depth):
        nodes = {v: np.array([1.0]) for v in range(depth + 1)}
        g = Dpag.build(nodes, [(v, v + 1, 1) for v in range(depth)], k=1, i=1)
        states, y = forward(g, NetworkParams.zeros(Architecture(2, 1, 1, 2)))
        assert not states.any() and y == 0.5

    def test_matches_recursive_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            arch = Architecture(int(rng.integers(1, 5)), 3, 3, int(rng.integers(1, 5)))
            g = random_tree(rng, 5, arch.max_out_degree, arch.label_dim)
            p = perturbed_params(arch, rng, 1.0)
            states, y = forward(g, p)
            a_root = recursive_root_state(g, g.root, p.views.W_f, p.views.b_f, arch.state_dim)
            np.testing.assert_array_equal(states[g.root], a_root)
            z = np.tanh(p.views.W_h @ a_root + p.views.b_h)
            assert y == pytest.approx(logistic(p.views.w_out @ z + p.views.b_out[0]), rel=1e-14)

    def test_deterministic_and_round_trip(self):
        rng = np.random.default_rng(3)
        arch = Architecture(3, 2, 2, 4)
        g = random_tree(rng, 7, 2, 2, second_parent=0.5)
        p = perturbed_params(arch, rng)
        s1, y1 = forward(g, p)
        s2, y2 = forward(Dpag.from_record(json.loads(json.dumps(g.to_record()))), p)
        np.testing.assert_array_equal(s1, s2)
        assert y1 == y2

    def test_node_relabeling_keeps_output(self):
        rng = np.random.default_rng(5)
        arch = Architecture(3, 2, 2, 4)
        g = random_tree(rng, 7, 2, 2, second_parent=0.4)
        p = perturbed_params(arch, rng)
        perm = rng.permutation(g.n_nodes)
        nodes = [(int(perm[v]), g.label(v)) for v in range(g.n_nodes)]
        edges = [(int(perm[a]), int(perm[b]), pos) for a, b, pos in g.edges()]
        h = Dpag.build(nodes, edges, k=2, i=2)
        assert forward(h, p)[1] == pytest.approx(forward(g, p)[1], rel=1e-15)

    def test_label_change_only_moves_ancestors(self):
        rng = np.random.default_rng(8)
        arch = Architecture(3, 2, 2, 4)
        g = random_tree(rng, 8, 2, 2, second_parent=0.4)
        p = perturbed_params(arch, rng)
        base, _ = forward(g, p)
        for v in range(g.n_nodes):
            feats = g.label_matrix()
            feats[v] += 0.5
            moved, _ = forward(g, p, feats)
            ancestors, stack = {v}, [v]
            while stack:
                for q in g.parents(stack.pop()):
                    if q not in ancestors:
                        ancestors.add(q)
                        stack.append(q)
            for u in range(g.n_nodes):
                if u not in ancestors:
                    np.testing.assert_array_equal(moved[u], base[u])
            assert not np.array_equal(moved[v], base[v])

    def test_incompatible_graph(self):
        g = Dpag.build({0: np.zeros(2)}, [], k=3, i=1)
        with pytest.raises(DimensionMismatch):
            forward(g, NetworkParams.zeros(Architecture(2, 2, 2, 2)))
        g = Dpag.build({0: np.zeros(3)}, [], k=2, i=1)
        with pytest.raises(DimensionMismatch):
            forward(g, NetworkParams.zeros(Architecture(2, 2, 2, 2)))


class TestInit:
    def test_seeded(self):
        arch = Architecture(5, 14, 2, 20)
        np.testing.assert_array_equal(init_params(arch, 7).vector, init_params(arch, 7).vector)
        assert not np.array_equal(init_params(arch, 7).vector, init_params(arch, 8).vector)

    def test_ranges_and_zero_biases(self):
        arch = Architecture(23, 14, 2, 160)
        v = init_params(arch, 0).views
        assert np.abs(v.W_f).max() <= 1 / math.sqrt(arch.input_width)
        assert np.abs(v.W_h).max() <= 1 / math.sqrt(23)
        assert np.abs(v.w_out).max() <= 1 / math.sqrt(160)
        assert not v.b_f.any() and not v.b_h.any() and not v.b_out.any()

    def test_read_only(self):
        p = init_params(Architecture(2, 2, 2, 2), 0)
        with pytest.raises(ValueError):
            p.vector[0] = 1.0
        with pytest.raises(ValueError):
            NetworkParams(p.arch, np.full(p.arch.n_params, np.nan))


class TestCheckpoint:
    def test_exact_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        arch = Architecture(4, 14, 2, 6)
        p = NetworkParams(arch, rng.normal(size=arch.n_params) * 1e3 ** rng.uniform(-3, 1, arch.n_params))
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, p, seed=9, epoch=12)
        q, header = load_checkpoint(path)
        assert q.arch == arch
        np.testing.assert_array_equal(q.vector, p.vector)
        assert header["seed"] == 9 and header["epoch"] == 12

    def test_rejects_unknown_major_and_truncation(self, tmp_path):
        p = init_params(Architecture(2, 2, 2, 2), 0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, p)
        lines = path.read_text().splitlines()
        header = json.loads(lines[0])
        header["format_version"] = "2.0"
        (tmp_path / "v2.ckpt").write_text("\n".join([json.dumps(header)] + lines[1:]))
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "v2.ckpt")
        (tmp_path / "short.ckpt").write_text("\n".join(lines[:-1]))
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "short.ckpt")
        (tmp_path / "junk.ckpt").write_text("not json\n")
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "junk.ckpt")
