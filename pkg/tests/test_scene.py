"""Synthetic scenes: ray casting, feature extraction, and the scenario
templates.

The stochastic parts are pinned two ways: deterministic sub-models are checked
against closed-form counts, and the binomial return model is checked against
its analytic mean within three standard errors over a fixed batch of seeds.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from coopfuse import (
    FeatureClass,
    GridSpec,
    GroundTruthBox,
    LidarModel,
    Pose2D,
    Scene,
    VehicleNode,
    align,
    build_scenario,
    cast_rays,
    classify_feature,
    extract_features,
)
from coopfuse.grid import normalize_heading, points_to_cells
from coopfuse.scene import TEMPLATES, channel_modulation, points_on_box

QUIET = LidarModel(dropout_enabled=False)


def _one_box_scene(center, lidar, length=4.6, width=2.0):
    box = GroundTruthBox(center=center, length=length, width=width, heading=0.0)
    node = VehicleNode(pose=Pose2D(0.0, 0.0, 0.0), lidar=lidar)
    return Scene(objects=(box,), vehicles=(node,), seed=0), node


class TestGroundTruthBox:
    def test_corners_and_aabb_rotated(self):
        box = GroundTruthBox(center=(0.0, 0.0), length=4.0, width=2.0, heading=math.pi / 2)
        assert box.aabb() == pytest.approx((-1.0, -2.0, 1.0, 2.0))
        assert box.corners().shape == (4, 2)
        assert box.edges().shape == (4, 2, 2)

    def test_contains_respects_margin(self):
        box = GroundTruthBox(center=(10.0, 0.0), length=4.0, width=2.0)
        pts = np.array([[10.0, 0.9], [10.0, 1.06], [12.1, 0.0]])
        np.testing.assert_array_equal(box.contains(pts), [True, False, False])
        np.testing.assert_array_equal(box.contains(pts, margin=0.05), [True, False, False])
        np.testing.assert_array_equal(box.contains(pts, margin=0.2), [True, True, True])

    def test_rejects_degenerate_dims(self):
        with pytest.raises(ValueError):
            GroundTruthBox(center=(0.0, 0.0), length=0.0, width=2.0)
        with pytest.raises(ValueError):
            GroundTruthBox(center=(0.0, 0.0), length=4.0, width=-1.0)


class TestLidarModel:
    def test_ray_count_default(self):
        assert LidarModel().ray_count == 1800

    def test_hit_probability_examples(self):
        lidar = LidarModel()
        assert lidar.hit_probability(0.0) == 1.0
        assert lidar.hit_probability(50.0) == 0.5
        assert lidar.hit_probability(95.0) == pytest.approx(0.05)
        assert lidar.hit_probability(99.0) == 0.05  # floor engaged
        assert QUIET.hit_probability(99.0) == 1.0

    def test_beams_on_target_examples(self):
        lidar = LidarModel()
        assert lidar.beams_on_target(1.0) == 16  # clipped at the beam count
        assert lidar.beams_on_target(10.0) == 6
        assert lidar.beams_on_target(30.0) == 2
        assert lidar.beams_on_target(45.0) == 1
        assert lidar.beams_on_target(120.0) == 1  # never below one

    def test_validation(self):
        with pytest.raises(ValueError):
            LidarModel(beams=0)
        with pytest.raises(ValueError):
            LidarModel(azimuth_step=0.0)
        with pytest.raises(ValueError):
            LidarModel(max_range=0.0)
        with pytest.raises(ValueError):
            LidarModel(dropout_floor=0.0)
        with pytest.raises(ValueError):
            LidarModel(dropout_floor=1.5)
        with pytest.raises(ValueError):
            LidarModel(beam_coverage=0.0)


class TestSceneValidation:
    def test_rejects_overlapping_boxes(self):
        a = GroundTruthBox(center=(10.0, 0.0), length=4.6, width=2.0)
        b = GroundTruthBox(center=(10.5, 0.2), length=4.6, width=2.0)
        node = VehicleNode(pose=Pose2D(0.0, 0.0, 0.0), lidar=QUIET)
        with pytest.raises(ValueError, match="overlap"):
            Scene(objects=(a, b), vehicles=(node,), seed=0)

    def test_rejects_empty_vehicle_list(self):
        with pytest.raises(ValueError):
            Scene(objects=(), vehicles=(), seed=0)

    def test_senders_sorted_by_distance(self):
        near = VehicleNode(pose=Pose2D(5.0, 0.0, 0.0), lidar=QUIET)
        far = VehicleNode(pose=Pose2D(50.0, 0.0, 0.0), lidar=QUIET)
        recv = VehicleNode(pose=Pose2D(0.0, 0.0, 0.0), lidar=QUIET)
        scene = Scene(objects=(), vehicles=(recv, far, near), seed=0)
        assert scene.receiver is recv
        assert scene.senders() == (near, far)


class TestCastRays:
    def test_empty_scene_yields_empty_cloud(self):
        node = VehicleNode(pose=Pose2D(0.0, 0.0, 0.0), lidar=QUIET)
        scene = Scene(objects=(), vehicles=(node,), seed=0)
        cloud = cast_rays(scene, node, (0, 0))
        assert cloud.shape == (0, 2)

    def test_foreign_vehicle_rejected(self):
        scene, node = _one_box_scene((12.0, 0.0), QUIET)
        stranger = VehicleNode(pose=node.pose, lidar=QUIET)
        with pytest.raises(ValueError):
            cast_rays(scene, stranger, (0, 0))

    def test_front_face_sweep(self):
        """With one return per hit, a facing wall gets exactly one point per
        fan ray that crosses it, all on the wall's plane."""
        probe = LidarModel(dropout_enabled=False, beam_coverage=10.0)
        scene, node = _one_box_scene((12.3, 0.0), probe)  # front face at x = 10
        cloud = cast_rays(scene, node, (0, 0))

        assert len(cloud) == 57
        np.testing.assert_allclose(cloud[:, 0], 10.0, atol=1e-9)
        # independent count: azimuths whose tangent line crosses the face span
        half = math.atan2(1.0, 10.0)
        az = np.array([normalize_heading(a) for a in probe.azimuths()])
        assert int((np.abs(az) <= half).sum()) == 57

    def test_occluder_shadows_rear_box(self):
        front = GroundTruthBox(center=(12.0, 0.0), length=4.6, width=2.0)
        rear = GroundTruthBox(center=(25.0, 0.0), length=4.6, width=2.0)
        node = VehicleNode(pose=Pose2D(0.0, 0.0, 0.0), lidar=QUIET)
        scene = Scene(objects=(front, rear), vehicles=(node,), seed=0)
        cloud = cast_rays(scene, node, (0, 0))
        assert points_on_box(cloud, front) > 0
        assert points_on_box(cloud, rear) == 0
        assert cloud[:, 0].max() < 22.0  # nothing lands behind the occluder

    def test_cloud_stays_inside_sensor_range(self):
        scene, node = _one_box_scene((99.0, 0.0), QUIET)  # front at 96.7 m
        cloud = cast_rays(scene, node, (0, 0))
        assert len(cloud) > 0
        assert np.hypot(cloud[:, 0], cloud[:, 1]).max() <= 100.0
        beyond, node2 = _one_box_scene((105.0, 0.0), QUIET)  # front at 102.7 m
        assert len(cast_rays(beyond, node2, (0, 0))) == 0

    def test_dropout_is_seed_deterministic(self):
        lidar = LidarModel()
        scene, node = _one_box_scene((15.0, 0.0), lidar)
        a = cast_rays(scene, node, (3, 7))
        b = cast_rays(scene, node, (3, 7))
        c = cast_rays(scene, node, (3, 8))
        np.testing.assert_array_equal(a, b)
        assert a.shape != c.shape or not np.array_equal(a, c)

    def test_return_counts_match_binomial_mean(self):
        """Measured return counts sit within three standard errors of the
        analytic binomial expectation, near and far."""
        probe = LidarModel(dropout_enabled=False, beam_coverage=1e-9)
        lidar = LidarModel()
        expectations = []
        measured = []
        sigmas = []
        for k, front in enumerate((10.0, 50.0)):
            center = (front + 2.3, 0.0)
            probe_scene, probe_node = _one_box_scene(center, probe)
            hits = cast_rays(probe_scene, probe_node, (0, 0))
            d = np.hypot(hits[:, 0], hits[:, 1])
            p = lidar.hit_probability(d)
            b = lidar.beams_on_target(d)
            expect = float(np.sum(b * p))
            var = float(np.sum(b * p * (1.0 - p)))

            scene, node = _one_box_scene(center, lidar)
            counts = [len(cast_rays(scene, node, (k, s))) for s in range(100)]
            expectations.append(expect)
            measured.append(float(np.mean(counts)))
            sigmas.append(math.sqrt(var / 100.0))

        assert len(d) == 11  # far face intercepts few fan rays
        assert expectations[0] == pytest.approx(307.74, abs=0.05)
        assert expectations[1] == pytest.approx(5.50, abs=0.05)
        for got, want, sigma in zip(measured, expectations, sigmas):
            assert abs(got - want) <= 3.0 * sigma

        # the far/near density ratio also matches its analytic value
        ratio = measured[1] / measured[0]
        analytic = expectations[1] / expectations[0]
        assert analytic == pytest.approx(0.0179, abs=5e-4)
        sigma_ratio = math.hypot(
            sigmas[1] / expectations[0], expectations[1] * sigmas[0] / expectations[0] ** 2
        )
        assert abs(ratio - analytic) <= 3.0 * sigma_ratio

    def test_removing_an_occluder_never_costs_points(self):
        """With dropout off, deleting one box can only expose the others."""
        rng = np.random.default_rng(31)
        node = VehicleNode(pose=Pose2D(0.0, 0.0, 0.0), lidar=QUIET)
        for _ in range(6):
            boxes: list[GroundTruthBox] = []
            guard = 0
            while len(boxes) < 6:
                guard += 1
                assert guard < 500
                cand = GroundTruthBox(
                    center=(float(rng.uniform(8.0, 60.0)), float(rng.uniform(-20.0, 20.0))),
                    length=float(rng.uniform(4.4, 4.8)),
                    width=float(rng.uniform(1.9, 2.1)),
                    heading=float(rng.choice((0.0, math.pi / 2))),
                )
                try:
                    Scene(objects=tuple(boxes) + (cand,), vehicles=(node,), seed=0)
                except ValueError:
                    continue
                boxes.append(cand)
            scene = Scene(objects=tuple(boxes), vehicles=(node,), seed=0)
            full = cast_rays(scene, node, (0, 0))
            for drop in range(len(boxes)):
                kept = tuple(b for i, b in enumerate(boxes) if i != drop)
                thinned = Scene(objects=kept, vehicles=(node,), seed=0)
                partial = cast_rays(thinned, node, (0, 0))
                for box in kept:
                    assert points_on_box(partial, box) >= points_on_box(full, box)


class TestChannelModulation:
    def test_shape_dtype_and_range(self):
        gain = channel_modulation(4, 5, 6)
        assert gain.shape == (4, 5, 6)
        assert gain.dtype == np.float32
        assert gain.min() >= 0.5
        assert gain.max() < 1.0

    def test_cached_and_deterministic(self):
        assert channel_modulation(4, 5, 6) is channel_modulation(4, 5, 6)
        # the all-zero index hashes to the bottom of the gain interval
        assert channel_modulation(1, 1, 1)[0, 0, 0] == np.float32(0.5)


class TestExtractFeatures:
    def test_empty_cloud_gives_zero_map(self):
        fmap = extract_features(np.zeros((0, 2)), GridSpec(), 4)
        assert not fmap.values.any()

    def test_single_point_value(self):
        spec = GridSpec()
        fmap = extract_features(np.array([[10.2, 0.2]]), spec, 8)
        inside, rows, cols = points_to_cells(spec, np.array([[10.2, 0.2]]))
        r, c = int(rows[0]), int(cols[0])
        base = math.log1p(1) / math.log1p(20)
        expected = (base * channel_modulation(8, *spec.shape)[:, r, c].astype(np.float64)).astype(
            np.float32
        )
        np.testing.assert_array_equal(fmap.values[:, r, c], expected)
        # nothing else is touched
        assert np.count_nonzero(fmap.values) == 8

    def test_saturated_cell_equals_modulation_gain(self):
        spec = GridSpec()
        pts = np.tile([[10.2, 0.2]], (25, 1))  # 25 points, n_sat is 20
        fmap = extract_features(pts, spec, 8)
        inside, rows, cols = points_to_cells(spec, pts[:1])
        r, c = int(rows[0]), int(cols[0])
        np.testing.assert_array_equal(
            fmap.values[:, r, c], channel_modulation(8, *spec.shape)[:, r, c]
        )

    def test_support_iff_points(self):
        rng = np.random.default_rng(33)
        spec = GridSpec()
        pts = rng.uniform((0.0, -40.0), (70.4, 40.0), size=(200, 2))
        fmap = extract_features(pts, spec, 4)
        counts = np.zeros(spec.shape, dtype=int)
        inside, rows, cols = points_to_cells(spec, pts)
        np.add.at(counts, (rows[inside], cols[inside]), 1)
        occupied = counts > 0
        assert (fmap.values[:, occupied].min(axis=0) > 0).all()
        assert not fmap.values[:, ~occupied].any()

    def test_invalid_saturation_rejected(self):
        with pytest.raises(ValueError):
            extract_features(np.zeros((0, 2)), GridSpec(), 4, n_sat=0)

    def test_near_box_reads_strong_far_box_reads_weak(self):
        """The same car at 8 m vs 45 m: dense support becomes a strong patch,
        sparse support stays weak."""
        spec = GridSpec()
        verdicts = {}
        for name, center, pts_expect, cells_expect in (
            ("near", (10.3, 0.0), 498, 10),
            ("far", (47.3, 0.0), 13, 6),
        ):
            scene, node = _one_box_scene(center, QUIET)
            cloud = cast_rays(scene, node, (0, 0))
            assert len(cloud) == pts_expect
            fmap = extract_features(cloud, spec, 128)
            inside, rows, cols = points_to_cells(spec, cloud)
            cells = sorted(set(zip(rows[inside].tolist(), cols[inside].tolist())))
            assert len(cells) == cells_expect
            patch = fmap.values[:, [r for r, _ in cells], [c for _, c in cells]]
            verdicts[name] = classify_feature(patch)
        assert verdicts["near"] is FeatureClass.STRONG
        assert verdicts["far"] is FeatureClass.WEAK

    def test_feature_mass_decays_with_distance(self):
        spec = GridSpec()
        masses = []
        for front in (10.0, 20.0, 30.0, 40.0, 50.0):
            scene, node = _one_box_scene((front + 2.3, 0.0), QUIET)
            cloud = cast_rays(scene, node, (0, 0))
            masses.append(float(extract_features(cloud, spec, 128).values.sum()))
        np.testing.assert_allclose(
            masses, [578.724, 510.558, 370.325, 243.413, 188.062], atol=0.01
        )
        assert all(a > b for a, b in zip(masses, masses[1:]))


class TestBuildScenario:
    def test_unknown_template_rejected(self):
        with pytest.raises(ValueError, match="template"):
            build_scenario("freeway", 0)

    def test_deterministic_rebuild(self):
        a = build_scenario("parking_lot", 3, channels=4)
        b = build_scenario("parking_lot", 3, channels=4)
        assert len(a.objects) == len(b.objects)
        for box_a, box_b in zip(a.objects, b.objects):
            assert box_a == box_b
        for node_a, node_b in zip(a.vehicles, b.vehicles):
            assert node_a.pose == node_b.pose
            np.testing.assert_array_equal(node_a.point_cloud, node_b.point_cloud)
            np.testing.assert_array_equal(node_a.feature_map.values, node_b.feature_map.values)

    def test_nodes_carry_aligned_artifacts(self):
        scene = build_scenario("multilane", 1, channels=2)
        assert scene.seed == 1
        for node in scene.vehicles:
            assert node.feature_map is not None
            assert node.feature_map.origin_pose == node.pose
            if len(node.point_cloud):
                d = np.hypot(
                    node.point_cloud[:, 0] - node.pose.x, node.point_cloud[:, 1] - node.pose.y
                )
                assert d.max() <= node.lidar.max_range

    @pytest.mark.parametrize("template", TEMPLATES)
    def test_receiver_and_sender_overlap(self, template):
        scene = build_scenario(template, 0, channels=2)
        pair = align(scene.receiver.feature_map, scene.senders()[0].feature_map)
        assert pair.overlap.area_overlap > 0

    def test_parking_lot_contract(self):
        """Box-count window, poses, and the hidden-car guarantee: at least 30%
        of the lot must be invisible to the receiver on every seed."""
        for seed in range(25):
            scene = build_scenario("parking_lot", seed, channels=1)
            n = len(scene.objects)
            assert 14 <= n <= 24
            recv, sender = scene.vehicles
            assert recv.pose.x == 0.0
            assert -2.0 <= recv.pose.y <= 2.0
            assert 25.4 <= sender.pose.x <= 26.6
            assert -21.0 <= sender.pose.y <= -19.0
            hidden = sum(
                points_on_box(recv.point_cloud, box) == 0 for box in scene.objects
            )
            assert 10 * hidden >= 3 * n

    def test_multilane_contract(self):
        for seed in range(8):
            scene = build_scenario("multilane", seed, channels=1)
            assert 6 <= len(scene.objects) <= 12
            sender = scene.vehicles[1]
            assert 20.0 <= sender.pose.x <= 40.0
            assert abs(sender.pose.y) == pytest.approx(3.7)
            assert all(box.heading == 0.0 for box in scene.objects)

    def test_intersection_contract(self):
        for seed in range(8):
            scene = build_scenario("intersection", seed, channels=1)
            assert 7 <= len(scene.objects) <= 14
            sender = scene.vehicles[1]
            assert sender.pose.heading == pytest.approx(math.pi / 2)
            assert 32.1 <= sender.pose.x <= 42.1
            for box in scene.objects:
                assert box.heading in (0.0,) or abs(box.heading) == pytest.approx(math.pi / 2)
