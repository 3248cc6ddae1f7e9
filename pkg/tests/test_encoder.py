import math

import numpy as np
import pytest

from riskgraph.dpag import ColorState, NodeLabel, ObjectType
from riskgraph.encoder import (
    LABEL_DIM,
    IntersectionGeometry,
    ObjectSnapshot,
    SceneFrame,
    Signal,
    Trend,
    Zone,
    assign_color,
    classify_zone,
    encode_scene,
    feature_matrix,
    knowledge_flags,
    label_vector,
    max_frames,
    radial_trend,
)
from _cases import random_scene, rigid_move
from riskgraph.errors import ConfigInvalid, EmptyScene, TooManyObjects

GEOM = IntersectionGeometry()


def snap(pos, speed=10.0, direction=(0.0, 1.0), t=0.0, oid="host", otype=ObjectType.VEHICLE):
    return ObjectSnapshot(oid, otype, tuple(pos), speed, tuple(direction), t)


def straight_scene(n_frames, with_remote=True, t0=0.0):
    """Host drives north on the south arm; a remote drives west on the east arm."""
    frames = []
    for j in range(n_frames):
        t = t0 + 0.2 * j
        host = snap((1.5, -40.0 + 2.4 * j), 12.0, (0, 1), t)
        detected = ()
        if with_remote:
            detected = (snap((35.0 - 2.0 * j, 1.5), 10.0, (-1, 0), t, oid="r1"),)
        frames.append(SceneFrame(t, host, detected))
    return frames


class TestZones:
    def test_center_is_danger_zone(self):
        assert classify_zone((0.0, 0.0), GEOM) is Zone.C

    def test_thirty_metres_on_lane_is_zone_a(self):
        assert classify_zone((30.0, 1.5), GEOM) is Zone.A
        assert classify_zone((1.5, -30.0), GEOM) is Zone.A

    def test_zone_b(self):
        assert classify_zone((-1.5, 20.0), GEOM) is Zone.B

    def test_off_road_is_out(self):
        assert classify_zone((40.0, 40.0), GEOM) is Zone.OUT
        # on the road but beyond sensor range
        assert classify_zone((80.0, 1.5), GEOM) is Zone.OUT

    def test_rotated_geometry(self):
        g = IntersectionGeometry(center=(100.0, -50.0), orientation=math.pi / 2)
        # local (30, 1.5) lies along the world y axis after a quarter turn
        world = g.to_world((30.0, 1.5))
        np.testing.assert_allclose(world, [98.5, -20.0])
        assert classify_zone(world, g) is Zone.A

    def test_geometry_validation(self):
        with pytest.raises(ConfigInvalid):
            IntersectionGeometry(danger_half_width=30.0)
        with pytest.raises(ConfigInvalid):
            IntersectionGeometry(driving_area=((10.0, 20.0, 10.0, 20.0),))


class TestTrend:
    def test_decreasing(self):
        assert radial_trend((18.0, 0.0), (20.0, 0.0), GEOM) is Trend.DECREASING

    def test_increasing(self):
        assert radial_trend((20.0, 0.0), (18.0, 0.0), GEOM) is Trend.INCREASING

    def test_unchanged(self):
        assert radial_trend((18.0, 0.0), (18.0, 0.0), GEOM) is Trend.UNCHANGED
        # circling the center at constant radius
        assert radial_trend((0.0, 18.0), (18.0, 0.0), GEOM) is Trend.UNCHANGED


class TestColors:
    def test_table_rows(self):
        assert assign_color(Zone.A, Trend.DECREASING).value == "001"
        assert assign_color(Zone.B, Trend.INCREASING).value == "110"
        assert assign_color(Zone.B, Trend.UNCHANGED, ColorState.ORANGE) is ColorState.ORANGE
        assert assign_color(Zone.A, Trend.INCREASING) is ColorState.BLUE
        assert assign_color(Zone.B, Trend.DECREASING) is ColorState.ORANGE

    def test_total_over_zone_trend_pairs(self):
        for zone in Zone:
            for trend in Trend:
                assert isinstance(assign_color(zone, trend, ColorState.YELLOW), ColorState)

    def test_danger_zone_and_out_ignore_trend(self):
        for trend in Trend:
            assert assign_color(Zone.C, trend, ColorState.BLUE) is ColorState.RED
            assert assign_color(Zone.OUT, trend, ColorState.BLUE) is ColorState.WHITE


class TestKnowledge:
    def test_speeding(self):
        assert knowledge_flags(snap((1.5, -30.0), 25.0, (0, 1)), GEOM) == (0, 0, 1)
        assert GEOM.speed_limit == pytest.approx(22.2222, abs=1e-4)

    def test_wrong_way(self):
        assert knowledge_flags(snap((1.5, -30.0), 10.0, (0, -1)), GEOM) == (1, 0, 0)
        # the outbound lane of the same arm points away from the center
        assert knowledge_flags(snap((-1.5, -30.0), 10.0, (0, -1)), GEOM) == (0, 0, 0)
        assert knowledge_flags(snap((-1.5, -30.0), 10.0, (0, 1)), GEOM) == (1, 0, 0)

    def test_lawful(self):
        assert knowledge_flags(snap((1.5, -30.0), 10.0, (0, 1)), GEOM) == (0, 0, 0)

    def test_light_uses_stopping_distance(self):
        g = IntersectionGeometry(signal_state={"south": "red"})
        # 10 m to the stop line; 14 m/s needs 196/12 = 16.3 m to stop, 8 m/s only 5.3 m
        assert knowledge_flags(snap((1.5, -15.0), 14.0, (0, 1)), g) == (0, 1, 0)
        assert knowledge_flags(snap((1.5, -15.0), 8.0, (0, 1)), g) == (0, 0, 0)
        assert knowledge_flags(snap((1.5, -15.0), 14.0, (0, 1)), GEOM) == (0, 0, 0)
        amber = IntersectionGeometry(signal_state={"south": Signal.AMBER})
        assert knowledge_flags(snap((1.5, -15.0), 14.0, (0, 1)), amber)[1] == 1


class TestEncodeScene:
    def test_single_frame(self):
        g = encode_scene(straight_scene(1, with_remote=False), GEOM)
        assert g.n_nodes == 1
        lab = g.label(g.root)
        assert lab.position == (1.5, -40.0)
        assert lab.state_color is ColorState.YELLOW

    def test_three_frames_with_remote(self):
        g = encode_scene(straight_scene(3), GEOM)
        assert g.n_nodes == 6
        assert g.depth() == 3
        assert g.in_skeleton_class(1, 2)
        root = g.label(g.root)
        assert root.object_type is ObjectType.VEHICLE and root.frame_index == 2
        remote, host = g.child_slots(g.root)
        assert g.label(host).frame_index == 1 and g.label(host).position[1] == pytest.approx(-37.6)
        assert g.label(remote).position[0] == pytest.approx(31.0)
        assert g.out_degree(remote) == 0

    def test_window_keeps_eight_frames(self):
        assert max_frames(1.5) == 8
        g = encode_scene(straight_scene(10, with_remote=False), GEOM)
        assert g.n_nodes == 8
        assert g.depth() == 7
        g = encode_scene(straight_scene(10), GEOM)
        assert g.n_nodes == 16 and g.depth() == 8
        frames = sorted({g.label(v).frame_index for v in range(g.n_nodes)})
        assert frames == list(range(8))

    def test_colors_thread_through_frames(self):
        # a remote that stands still keeps the color it was first given
        frames = []
        for j in range(4):
            t = 0.2 * j
            frames.append(SceneFrame(t, snap((1.5, -40.0 + 2.4 * j), 12.0, (0, 1), t),
                                     (snap((-1.5, 20.0), 0.0, (0, -1), t, oid="r"),)))
        g = encode_scene(frames, GEOM)
        remotes = [v for v in range(g.n_nodes) if g.out_degree(v) == 0 and v != g.root]
        assert {g.label(v).state_color for v in remotes} == {ColorState.CYAN}

    def test_errors(self):
        with pytest.raises(EmptyScene):
            encode_scene([], GEOM)
        host = snap((1.5, -40.0))
        crowded = SceneFrame(0.0, host, (snap((30, 1.5), oid="a"), snap((-30, -1.5), oid="b")))
        with pytest.raises(TooManyObjects):
            encode_scene([crowded], GEOM)
        frames = straight_scene(3)
        frames[2] = SceneFrame(0.5, frames[2].host, frames[2].detected)
        with pytest.raises(ConfigInvalid):
            encode_scene(frames, GEOM)

    def test_three_slot_layout(self):
        t = 0.0
        frame = SceneFrame(t, snap((1.5, -30.0)), (
            snap((30.0, 1.5), oid="car", direction=(-1, 0)),
            snap((7.0, 7.0), 1.2, (0, -1), oid="walker", otype=ObjectType.PEDESTRIAN),
        ))
        g = encode_scene([frame, SceneFrame(0.2, snap((1.5, -27.6), t=0.2), ())], GEOM, k=3)
        older = g.child_slots(g.root)[2]
        car, walker, host = g.child_slots(older)
        assert host is None
        assert g.label(car).object_type is ObjectType.VEHICLE
        assert g.label(walker).object_type is ObjectType.PEDESTRIAN


class TestRigidInvariance:
    def test_hundred_random_scenes(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            geom = IntersectionGeometry(signal_state={"south": "red", "east": "amber"})
            frames = random_scene(rng, int(rng.integers(1, 11)))
            angle = rng.uniform(-np.pi, np.pi)
            shift = rng.uniform(-500, 500, size=2)
            moved = rigid_move(frames, angle, shift)
            g1 = encode_scene(frames, geom)
            g2 = encode_scene(moved, geom.transformed(angle, shift))
            assert g1.n_nodes == g2.n_nodes
            for v in range(g1.n_nodes):
                assert g1.child_slots(v) == g2.child_slots(v)
                a, b = g1.label(v), g2.label(v)
                assert a.state_color is b.state_color
                assert a.knowledge == b.knowledge
                assert a.object_type is b.object_type


class TestLabelVector:
    def test_stopped_host_at_center(self):
        lab = NodeLabel(ObjectType.VEHICLE, (0.0, 0.0), 0.0, (0.6, 0.8), ColorState.RED)
        np.testing.assert_array_equal(
            label_vector(lab, GEOM), [0, 0, 0, 0.6, 0.8, 0, 1, 0, 0, 0, 0, 1, 0, 0])

    def test_white_pedestrian(self):
        lab = NodeLabel(ObjectType.PEDESTRIAN, (40.0, 40.0), 1.0, (1.0, 0.0), ColorState.WHITE)
        vec = label_vector(lab, GEOM)
        np.testing.assert_array_equal(vec[5:8], [1, 0, 0])
        np.testing.assert_array_equal(vec[11:14], [0, 1, 0])

    def test_length_range_and_clamping(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            pos = tuple(rng.uniform(-300, 300, size=2))
            ang = rng.uniform(0, 2 * np.pi)
            lab = NodeLabel(ObjectType.BICYCLE, pos, rng.uniform(0, 2 * GEOM.speed_limit),
                            (np.cos(ang), np.sin(ang)), ColorState.BLUE, (1, 0, 1))
            vec = label_vector(lab, GEOM)
            assert vec.shape == (LABEL_DIM,)
            assert np.all(np.abs(vec) <= 1.0 + 1e-12)
        far = NodeLabel(ObjectType.VEHICLE, (120.0, 0.0), 5.0, (1.0, 0.0), ColorState.WHITE)
        assert label_vector(far, GEOM)[0] == 1.0

    def test_feature_matrix_rows(self):
        g = encode_scene(straight_scene(3), GEOM)
        F = feature_matrix(g, GEOM)
        assert F.shape == (6, LABEL_DIM)
        np.testing.assert_array_equal(F[g.root], label_vector(g.label(g.root), GEOM))


class TestSerialization:
    def test_frame_round_trip(self):
        frames = straight_scene(2)
        assert [SceneFrame.from_dict(f.to_dict()) for f in frames] == frames

    def test_geometry_round_trip(self):
        g = IntersectionGeometry(center=(3.0, 4.0), orientation=0.3, signal_state={"west": "red"})
        g2 = IntersectionGeometry.from_dict(g.to_dict())
        assert g2.to_dict() == g.to_dict()
        with pytest.raises(ConfigInvalid):
            IntersectionGeometry.from_dict({"radius": 3})
