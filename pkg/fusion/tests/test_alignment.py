import numpy as np
from django.test import SimpleTestCase

from fusion.alignment import (
    REASON_DEGENERATE, REASON_ROTATION_GATE, REASON_SFM_FAILED, REASON_TRANSLATION_GATE, Aligner, AgentSession,
    AgentState, AlignmentReport, SyntheticSfmBackend, promote, register, select_windows,
)
from fusion.conf import AlignmentConfig, SolverConfig
from fusion.correspondence import CandidateCorrespondence
from fusion.exceptions import InsufficientData
from fusion.geometry import Sim3Transform, apply_to_pose, transform_error

from . import LONG_TESTS
from .fixtures import depth_frame, profile, random_sim3, trajectory

WINDOW = 8
FRAMES = 12


class TwoAgentWorld:
    """An origin agent and one agent with an unknown local frame, both with full histories."""

    def __init__(self, transform, seed=0):
        self.transform = transform
        self.poses = {0: trajectory(FRAMES, seed), 1: trajectory(FRAMES, seed + 1, radius=1.3)}
        self.anchor = AgentSession.origin(0, profile(metric=True))
        self.agent = AgentSession(1, profile())
        to_local = transform.inverse()
        for seq in range(FRAMES):
            self.anchor.record(depth_frame(0, seq, self.poses[0][seq]))
            self.agent.record(depth_frame(1, seq, apply_to_pose(to_local, self.poses[1][seq])))

    def global_pose(self, agent_id, seq):
        poses = self.poses.get(agent_id)
        return poses[seq] if poses is not None and 0 <= seq < len(poses) else None

    def candidate(self, seq=6):
        return CandidateCorrespondence((0, seq), (1, seq), 0.9, 1.0, True)

    def aligner(self, **backend):
        sfm = SyntheticSfmBackend(self.global_pose, **backend)
        return Aligner(sfm, SolverConfig(), AlignmentConfig(window=WINDOW))


class AlignmentAttemptTests(SimpleTestCase):

    def test_noiseless_attempt_recovers_the_transform(self):
        world = TwoAgentWorld(random_sim3(3))
        report = world.aligner().attempt(world.candidate(), world.anchor, world.agent)
        self.assertTrue(report.accepted, report.reason)
        err = transform_error(report.transform, world.transform)
        self.assertLess(err.translation_err, 1e-6)
        self.assertLess(err.rotation_err, 1e-6)
        self.assertLess(err.scale_err, 1e-6)
        self.assertEqual(report.frame_j, (1, 6))

    def test_result_does_not_depend_on_the_sfm_gauge(self):
        world = TwoAgentWorld(random_sim3(4))
        results = [
            world.aligner(seed=seed, scale_range=(0.1, 10.0)).attempt(world.candidate(), world.anchor, world.agent)
            for seed in range(4)
        ]
        for report in results:
            self.assertTrue(report.accepted)
            err = transform_error(report.transform, results[0].transform)
            self.assertLess(err.translation_err, 1e-6)
            self.assertLess(err.rotation_err, 1e-6)
            self.assertLess(err.scale_err, 1e-6)

    def test_translation_bias_trips_the_gate(self):
        world = TwoAgentWorld(random_sim3(5))
        shift = np.array([0.2, 0.0, 0.0])
        report = world.aligner(bias=lambda index, frame: shift if index % 2 else -shift).attempt(
            world.candidate(), world.anchor, world.agent)
        self.assertFalse(report.accepted)
        self.assertEqual(report.reason, REASON_TRANSLATION_GATE)
        self.assertGreater(report.translation_rmse, 0.1)
        self.assertIsNotNone(report.transform)

    def test_gates_over_seeded_trials(self):
        trials = 100 if LONG_TESTS else 10
        gated = (REASON_TRANSLATION_GATE, REASON_ROTATION_GATE)
        for seed in range(trials):
            world = TwoAgentWorld(random_sim3(100 + seed), seed)
            rng = np.random.default_rng(seed)
            axis = rng.normal(size=3)
            shift = 0.3 * axis / np.linalg.norm(axis)
            with self.subTest(seed=seed):
                clean = world.aligner(seed=seed).attempt(world.candidate(), world.anchor, world.agent)
                self.assertTrue(clean.accepted, clean.reason)
                shifted = world.aligner(seed=seed, bias=lambda index, frame: shift if index % 2 else -shift)
                report = shifted.attempt(world.candidate(), world.anchor, world.agent)
                self.assertFalse(report.accepted)
                self.assertIn(report.reason, gated)
                twisted = world.aligner(seed=seed, sigma_r_deg=20.0)
                report = twisted.attempt(world.candidate(), world.anchor, world.agent)
                self.assertFalse(report.accepted)
                self.assertIn(report.reason, gated)

    def test_dropped_images_abort_the_attempt(self):
        world = TwoAgentWorld(random_sim3(6))
        report = world.aligner(p_drop=1.0).attempt(world.candidate(), world.anchor, world.agent)
        self.assertFalse(report.accepted)
        self.assertEqual(report.reason, REASON_SFM_FAILED)
        self.assertIsNone(report.transform)

    def test_short_history_is_insufficient(self):
        world = TwoAgentWorld(random_sim3(7))
        aligner = Aligner(SyntheticSfmBackend(world.global_pose), alignment=AlignmentConfig(window=FRAMES + 1))
        with self.assertRaises(InsufficientData):
            aligner.attempt(world.candidate(), world.anchor, world.agent)

    def test_windows_shift_inwards_at_the_edges(self):
        world = TwoAgentWorld(Sim3Transform())
        window_i, window_j = select_windows(world.candidate(seq=0), world.anchor.history,
                                            world.agent.history, WINDOW)
        self.assertEqual([f.seq for f in window_i], list(range(WINDOW)))
        window_i, _ = select_windows(world.candidate(seq=FRAMES - 1), world.anchor.history,
                                     world.agent.history, WINDOW)
        self.assertEqual(window_i[-1].seq, FRAMES - 1)
        self.assertEqual(len(window_i), WINDOW)

    def test_identical_sfm_poses_are_degenerate_without_rotation_term(self):
        world = TwoAgentWorld(Sim3Transform())
        frames = list(world.agent.history)[:3]
        still = [frames[0].pose] * 3
        report = register(frames, still, frames, still, still, SolverConfig(epsilon=0.0))
        self.assertEqual(report.reason, REASON_DEGENERATE)


class SyntheticSfmTests(SimpleTestCase):

    def setUp(self):
        self.world = TwoAgentWorld(random_sim3(8))
        self.frames = list(self.world.agent.history)[:WINDOW] + list(self.world.anchor.history)[:WINDOW]

    def run_backend(self, seed):
        backend = SyntheticSfmBackend(self.world.global_pose, sigma_t=0.01, sigma_r_deg=1.0, p_drop=0.1, seed=seed)
        return [backend.run(self.frames) for _ in range(3)]

    def test_fixed_seed_repeats_exactly(self):
        first, second = self.run_backend(11), self.run_backend(11)
        for a, b in zip(first, second):
            self.assertEqual(a.frame_ids, b.frame_ids)
            self.assertEqual([p is None for p in a.poses], [p is None for p in b.poses])
            for pa, pb in zip(a.poses, b.poses):
                if pa is not None:
                    np.testing.assert_array_equal(pa.to_array(), pb.to_array())

    def test_other_seed_draws_another_gauge(self):
        a, b = self.run_backend(11)[0], self.run_backend(12)[0]
        posed = [(pa, pb) for pa, pb in zip(a.poses, b.poses) if pa is not None and pb is not None]
        self.assertTrue(posed)
        self.assertFalse(all(np.array_equal(pa.to_array(), pb.to_array()) for pa, pb in posed))


class PromotionTests(SimpleTestCase):

    def accepted_report(self, transform):
        return AlignmentReport(1, 0, transform, (0.0, 0.0), (0.0, 0.0), accepted=True)

    def test_promotion_flushes_the_cache_in_time_order(self):
        session = AgentSession(1, profile())
        for seq in (3, 1, 2):
            session.record(depth_frame(1, seq))
        flushed = []
        promote(session, self.accepted_report(random_sim3(1)), sink=flushed.append)
        self.assertIs(session.state, AgentState.ALIGNED)
        self.assertEqual([f.seq for f in flushed], [1, 2, 3])
        self.assertEqual(len(session.cache), 0)

    def test_promotion_is_idempotent(self):
        session = AgentSession(1, profile())
        session.record(depth_frame(1, 0))
        first = random_sim3(2)
        flushed = []
        promote(session, self.accepted_report(first), sink=flushed.append)
        promote(session, self.accepted_report(random_sim3(3)), sink=flushed.append)
        self.assertIs(session.local_to_global, first)
        self.assertEqual(len(flushed), 1)

    def test_rejection_keeps_the_cache(self):
        session = AgentSession(1, profile())
        session.record(depth_frame(1, 0))
        session.begin()
        promote(session, AlignmentReport.rejected(1, 0, REASON_SFM_FAILED))
        self.assertIs(session.state, AgentState.UNALIGNED)
        self.assertEqual(len(session.cache), 1)
        self.assertIsNone(session.local_to_global)

    def test_accepted_report_must_lie_within_the_gates(self):
        with self.assertRaises(ValueError):
            AlignmentReport(1, 0, Sim3Transform(), (0.5, 0.0), (0.0, 0.0), accepted=True)

    def test_log_line_names_the_verdict(self):
        line = AlignmentReport.rejected(4, 0, REASON_SFM_FAILED).as_log_line()
        self.assertTrue(line.startswith('ALIGN '))
        self.assertIn('agent=4', line)
        self.assertIn('accepted=0 reason=sfm_failed', line)


class SessionTests(SimpleTestCase):

    def test_held_out_frames_stay_out_of_the_cache(self):
        session = AgentSession(1, profile())
        self.assertFalse(session.record(depth_frame(1, 0), trainable=False))
        self.assertTrue(session.record(depth_frame(1, 1)))
        self.assertEqual([f.seq for f in session.history], [0, 1])
        self.assertEqual([f.seq for f in session.cache], [1])

    def test_aligned_sessions_do_not_cache(self):
        session = AgentSession.origin(0, profile(metric=True))
        self.assertFalse(session.record(depth_frame(0, 0)))
        self.assertEqual(len(session.cache), 0)

    def test_cache_cap_drops_the_oldest(self):
        session = AgentSession(1, profile(), cache_cap=2)
        for seq in range(4):
            session.record(depth_frame(1, seq))
        self.assertEqual([f.seq for f in session.cache], [2, 3])
        self.assertEqual(session.cache_dropped, 2)

    def test_states_move_in_order(self):
        session = AgentSession(1, profile())
        session.begin()
        self.assertIs(session.state, AgentState.ALIGNING)
        with self.assertRaises(ValueError):
            session.begin()
        session.abort()
        self.assertIs(session.state, AgentState.UNALIGNED)
        with self.assertRaises(ValueError):
            AgentSession(1, profile(), state=AgentState.ALIGNED)
