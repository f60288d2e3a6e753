import unittest

import numpy as np
from django.test import SimpleTestCase

from fusion.geometry import transform_error
from fusion.splatmap.gaussians import GaussianMap
from fusion.splatmap.snapshot import MapSnapshot
from fusion.stream.evaluation import AgentMetrics, EvaluationTable, evaluate
from fusion.stream.pipeline import (
    MODE_FUSION, MODE_INDIVIDUALS, MODE_ORACLE, LockstepRunner, PipelineResult, oracle_config, psnr_gap,
    run_pipeline,
)
from fusion.stream.simulator import scene_messages

from . import LONG_REASON, LONG_TESTS
from .fixtures import small_config, small_scene


def messages(scene):
    return [msg for _, msg in scene_messages(scene)]


def alignment_only(**sections):
    """Config whose runs align and ingest but never optimise."""
    return small_config(optimizer={'steps_per_frame': 0}, pool={'spawn_per_frame': 32, 'holdout_every': 5},
                        **sections)


class EndToEndAlignmentTests(SimpleTestCase):

    def assertAligned(self, result, scene, translation, rotation_deg, scale):
        for agent_id in sorted(scene.agents):
            if agent_id == scene.origin_id:
                continue
            with self.subTest(agent=agent_id):
                self.assertIn(agent_id, result.snapshot.transforms)
                err = transform_error(result.snapshot.transforms[agent_id], scene.transform(agent_id))
                self.assertLess(err.translation_err, translation)
                self.assertLess(err.rotation_err, rotation_deg)
                self.assertLess(err.scale_err, scale)

    def test_noiseless_run_aligns_every_agent(self):
        scene = small_scene(seconds=4.0)
        result = run_pipeline(scene, messages(scene), alignment_only(), MODE_FUSION)
        self.assertAligned(result, scene, 1e-3, 0.1, 1e-3)
        accepted = [r for r in result.reports if r.accepted]
        self.assertEqual(sorted(r.agent_id for r in accepted), [1, 2])
        for report in accepted:
            err = transform_error(report.transform, scene.transform(report.agent_id))
            self.assertLess(err.translation_err, 1e-3)
        for row in result.table.rows:
            self.assertIsNotNone(row.psnr)

    def test_noisy_sfm_still_lands_within_centimetres(self):
        scene = small_scene(seconds=4.0)
        config = alignment_only(alignment={'window': 8, 'sfm_sigma_t': 0.01, 'sfm_seed': 5})
        result = run_pipeline(scene, messages(scene), config, MODE_FUSION)
        self.assertAligned(result, scene, 0.05, 10.0, 0.1)

    def test_history_is_recorded_on_the_frame_cadence(self):
        scene = small_scene(seconds=2.0)
        result = run_pipeline(scene, messages(scene), alignment_only(), MODE_FUSION, eval_every_frames=10)
        self.assertEqual(sorted(result.history), list(range(10, result.frames + 1, 10)))


class ModeTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.scene = small_scene(seconds=2.0)
        cls.messages = messages(cls.scene)

    def test_unknown_mode(self):
        with self.assertRaises(ValueError):
            LockstepRunner(self.scene, mode='median')

    def test_oracle_config_freezes_poses(self):
        optimizer = oracle_config(small_config()).optimizer
        self.assertEqual(optimizer.lr_pose_rotation, 0.0)
        self.assertEqual(optimizer.lr_pose_translation, 0.0)
        self.assertEqual(optimizer.lr_correction, 0.0)
        self.assertGreater(optimizer.lr_color, 0.0)

    def test_oracle_uses_the_true_transforms(self):
        result = run_pipeline(self.scene, self.messages, alignment_only(), MODE_ORACLE)
        self.assertEqual(result.reports, [])
        for agent_id in self.scene.agents:
            err = transform_error(result.snapshot.transforms[agent_id], self.scene.transform(agent_id))
            self.assertLess(err.translation_err, 1e-12)
        self.assertEqual(result.snapshot.gaussians.counts_by_agent().keys(), set(self.scene.agents))

    def test_individual_maps_are_kept_apart(self):
        result = run_pipeline(self.scene, self.messages, alignment_only(), MODE_INDIVIDUALS)
        self.assertEqual(sorted(result.snapshots), sorted(self.scene.agents))
        for agent_id, snapshot in result.snapshots.items():
            self.assertEqual(set(snapshot.gaussians.counts_by_agent()), {agent_id})
        self.assertEqual([r.agent_id for r in result.table.rows], sorted(self.scene.agents))
        self.assertFalse(result.table.with_alignment)

    def test_psnr_gap(self):
        def result(value):
            return PipelineResult(MODE_FUSION, {}, EvaluationTable([AgentMetrics(0, value)]))

        self.assertAlmostEqual(psnr_gap(result(24.0), result(25.5)), 1.5)
        self.assertIsNone(psnr_gap(result(None), result(25.5)))


class ReconstructionTests(SimpleTestCase):

    def test_mapped_scene_beats_an_empty_map(self):
        scene = small_scene(seconds=2.0)
        config = small_config(pool={'spawn_per_frame': 64, 'holdout_every': 5})
        result = run_pipeline(scene, messages(scene), config, MODE_ORACLE)
        empty = evaluate(MapSnapshot(GaussianMap()), scene, 5)
        self.assertGreater(result.final_psnr, empty.mean_psnr)
        self.assertGreater(result.snapshot.steps, 0)

    @unittest.skipUnless(LONG_TESTS, LONG_REASON)
    def test_fusion_stays_close_to_the_oracle(self):
        scene = small_scene(seconds=24.0)
        config = small_config(optimizer={'steps_per_frame': 4})
        stream = messages(scene)
        fusion = run_pipeline(scene, stream, config, MODE_FUSION)
        oracle = run_pipeline(scene, stream, config, MODE_ORACLE)
        self.assertLess(psnr_gap(fusion, oracle), 2.0)
        self.assertLess(fusion.final_depth_l1, 2.0 * oracle.final_depth_l1)
        self.assertTrue(np.isfinite(fusion.final_psnr))
