import math

import numpy as np
from django.test import SimpleTestCase

from fusion.exceptions import DegenerateInput, ScaleUndetermined
from fusion.geometry import (
    PosePairSet, Rotation3, SE3Pose, Sim3Transform, apply_to_pose, brute_force_orientation, compose,
    orientation_objective, solve_absolute_orientation, transform_error, umeyama,
)

from . import LONG_TESTS
from .fixtures import pose_pairs, random_sim3, trajectory


class Sim3TransformTests(SimpleTestCase):

    def test_compose_with_inverse_is_identity(self):
        t = random_sim3(1)
        self.assertTrue(compose(t, t.inverse()).is_identity(atol=1e-9))
        self.assertTrue(compose(t.inverse(), t).is_identity(atol=1e-9))

    def test_apply_matches_matrix(self):
        t = random_sim3(2)
        points = np.random.default_rng(0).normal(size=(5, 3))
        homogeneous = np.column_stack([points, np.ones(5)]) @ t.matrix.T
        np.testing.assert_allclose(t.apply(points), homogeneous[:, :3], atol=1e-12)

    def test_wire_bytes_round_trip(self):
        t = random_sim3(3)
        back = Sim3Transform.from_bytes(t.to_bytes())
        np.testing.assert_array_equal(back.to_array(), t.to_array())

    def test_non_positive_scale_is_rejected(self):
        with self.assertRaises(DegenerateInput):
            Sim3Transform(0.0)

    def test_transform_error_of_scaled_copy(self):
        t = random_sim3(4)
        doubled = Sim3Transform(2.0 * t.scale, t.rotation, t.translation)
        err = transform_error(t, doubled)
        self.assertAlmostEqual(err.translation_err, 0.0)
        self.assertAlmostEqual(err.rotation_err, 0.0, places=6)
        self.assertAlmostEqual(err.scale_err, math.log(2.0))

    def test_pose_mapping_moves_positions_only_by_scale(self):
        t = Sim3Transform(3.0)
        pose = SE3Pose(Rotation3.from_rotvec([0.1, 0.2, 0.3]), (1.0, 0.0, 0.0))
        mapped = apply_to_pose(t, pose)
        np.testing.assert_allclose(mapped.translation, [3.0, 0.0, 0.0])
        self.assertLess(mapped.rotation.angle_to(pose.rotation), 1e-9)


class AbsoluteOrientationTests(SimpleTestCase):

    def test_noiseless_pairs_recover_the_transform(self):
        for seed in range(5):
            truth = random_sim3(seed)
            result = solve_absolute_orientation(pose_pairs(truth, seed=seed))
            err = transform_error(result.transform, truth)
            self.assertLess(err.translation_err, 1e-8)
            self.assertLess(err.rotation_err, 1e-6)
            self.assertLess(err.scale_err, 1e-9)
            self.assertLess(result.translation_rmse, 1e-8)
            self.assertFalse(result.scale_undetermined)

    def test_objective_never_increases(self):
        pairs = pose_pairs(random_sim3(7), seed=7, sigma_t=0.05, sigma_r_deg=3.0)
        trace = solve_absolute_orientation(pairs, epsilon=0.5).objective_trace
        self.assertTrue(all(b <= a + 1e-12 for a, b in zip(trace, trace[1:])))

    def test_matches_brute_force_on_noisy_pairs(self):
        restarts = 200 if LONG_TESTS else 12
        for seed, epsilon in ((11, 1e-3), (12, 0.1), (13, 1.0)):
            pairs = pose_pairs(random_sim3(seed), seed=seed, sigma_t=0.03, sigma_r_deg=2.0)
            result = solve_absolute_orientation(pairs, epsilon=epsilon, max_iterations=500, tolerance=1e-15)
            best, _ = brute_force_orientation(pairs, epsilon=epsilon, restarts=restarts, seed=seed)
            self.assertLessEqual(result.objective, best * (1.0 + 1e-6) + 1e-12)
            self.assertAlmostEqual(result.objective, orientation_objective(result.transform, pairs, epsilon),
                                   places=9)

    def test_epsilon_zero_matches_umeyama(self):
        pairs = pose_pairs(random_sim3(21), seed=21, sigma_t=0.02)
        src = np.array([p.translation for p in pairs.sources])
        tgt = np.array([p.translation for p in pairs.targets])
        closed = umeyama(src, tgt)
        result = solve_absolute_orientation(pairs, epsilon=0.0, max_iterations=500, tolerance=1e-15)
        err = transform_error(result.transform, closed)
        self.assertLess(err.translation_err, 1e-6)
        self.assertLess(err.rotation_err, 1e-4)
        self.assertLess(err.scale_err, 1e-6)

    def test_coincident_sources_fix_the_scale(self):
        truth = random_sim3(31)
        sources = [SE3Pose(Rotation3.random(np.random.default_rng(k)), (0.5, 0.5, 0.5)) for k in range(6)]
        pairs = PosePairSet(sources, [apply_to_pose(truth, p) for p in sources])
        result = solve_absolute_orientation(pairs)
        self.assertTrue(result.scale_undetermined)
        self.assertEqual(result.transform.scale, 1.0)
        self.assertLess(result.transform.rotation.angle_to(truth.rotation), 1e-6)

        with self.assertRaises(ScaleUndetermined) as ctx:
            solve_absolute_orientation(pairs, strict=True)
        self.assertTrue(ctx.exception.result.scale_undetermined)

        with self.assertRaises(DegenerateInput):
            solve_absolute_orientation(pairs, epsilon=0.0)

    def test_degenerate_inputs(self):
        with self.assertRaises(DegenerateInput):
            solve_absolute_orientation(PosePairSet([], []))
        with self.assertRaises(DegenerateInput):
            PosePairSet(trajectory(3), trajectory(4))
        with self.assertRaises(DegenerateInput):
            solve_absolute_orientation(pose_pairs(Sim3Transform()), epsilon=-1.0)

    def test_single_pair_is_placed_exactly(self):
        truth = random_sim3(41)
        pairs = pose_pairs(truth, count=1)
        result = solve_absolute_orientation(pairs)
        target = pairs.targets[0]
        mapped = apply_to_pose(result.transform, pairs.sources[0])
        self.assertTrue(result.scale_undetermined)
        self.assertTrue(mapped.allclose(target, atol=1e-9))
