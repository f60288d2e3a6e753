import os
import tempfile
from io import StringIO
from unittest import mock

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

from fusion.models import EvaluationRecord
from fusion.splatmap.export import read_ply
from fusion.splatmap.snapshot import MapSnapshot
from fusion.stream.recordings import read_truth
from fusion.stream.scene import SyntheticScene


def run(*args, **options):
    out = StringIO()
    call_command(*args, stdout=out, **options)
    return out.getvalue()


class RecordedSceneMixin:
    """Simulates a two-agent, one-second scene once per test class."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.base = os.path.join(cls.tmp.name, 'desk')
        cls.sim_output = run('sim', out=cls.base, scene_seed=3, agents=2, seconds=1.0, rate=5.0, size=[16, 16])

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def path(self, name):
        return os.path.join(self.tmp.name, name)


class SimCommandTests(RecordedSceneMixin, SimpleTestCase):

    def test_recording_files(self):
        self.assertIn('Recorded 10 frames in 14 messages', self.sim_output)
        self.assertIn('agent 1:', self.sim_output)
        for suffix in ('.hamr', '.hdsc', '.hlbl', '.truth.json'):
            self.assertTrue(os.path.exists(self.base + suffix), suffix)

    def test_bad_config_file_exits_with_code_two(self):
        config = self.path('bad.env')
        with open(config, 'w') as fh:
            fh.write('SOLVER_EPSILON=-1\n')
        with mock.patch.dict(os.environ), self.assertRaises(CommandError) as ctx:
            run('sim', out=self.path('never'), config=config)
        self.assertEqual(ctx.exception.returncode, 2)

    def test_missing_config_file_exits_with_code_two(self):
        with self.assertRaises(CommandError) as ctx:
            run('sim', out=self.path('never'), config=self.path('nowhere.env'))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertFalse(os.path.exists(self.path('never.hamr')))

    def test_bad_simulator_settings_exit_with_code_two(self):
        with self.assertRaises(CommandError) as ctx:
            run('sim', out=self.path('never'), agents=0)
        self.assertEqual(ctx.exception.returncode, 2)


class EvalExportQueryTests(RecordedSceneMixin, TestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.map_path = os.path.join(cls.tmp.name, 'desk.npz')
        cls.eval_output = run('eval', recording=cls.base + '.hamr', mode='oracle', holdout_n=5,
                              save_map=cls.map_path, eval_every=4)

    def test_pipeline_evaluation(self):
        self.assertIn('psnr_db', self.eval_output)
        self.assertIn('mean PSNR', self.eval_output)
        self.assertIn('held-out PSNR', self.eval_output)
        snapshot = MapSnapshot.load(self.map_path)
        self.assertEqual(sorted(snapshot.transforms), [0, 1])
        self.assertTrue(os.path.exists(self.path('desk.hfld')))

    def test_snapshot_evaluation_is_stored(self):
        output = run('eval', map=self.map_path, truth=self.base + '.truth.json', persist=True)
        self.assertIn('Stored evaluation', output)
        self.assertEqual(EvaluationRecord.objects.filter(mode='snapshot').count(), 2)

    def test_snapshot_evaluation_needs_truth(self):
        with self.assertRaises(CommandError):
            run('eval', map=self.map_path)

    def test_export_ply_and_png(self):
        scene = SyntheticScene.from_truth(read_truth(self.base + '.truth.json'))
        pose = ','.join(str(v) for v in scene.agents[0].global_pose(2).to_array())
        output = run('export', map=self.map_path, ply=self.path('desk.ply'), png=self.path('desk.png'),
                     depth_png=self.path('desk_depth.png'), pose=pose, size=[24, 16])
        self.assertIn('Rendered 24x16 view', output)
        self.assertEqual(len(read_ply(self.path('desk.ply'))), len(MapSnapshot.load(self.map_path)))
        self.assertTrue(os.path.exists(self.path('desk_depth.png')))

    def test_export_needs_a_target_and_a_pose(self):
        with self.assertRaises(CommandError):
            run('export', map=self.map_path)
        with self.assertRaises(CommandError):
            run('export', map=self.map_path, png=self.path('x.png'))
        with self.assertRaises(CommandError):
            run('export', map=self.map_path, png=self.path('x.png'), pose='1,0,0')

    def test_query_by_label(self):
        output = run('query', map=self.map_path, label='object_01', labels=self.base + '.hlbl', top_k=3)
        self.assertIn('3 results', output)
        self.assertIn('score=', output)

    def test_query_errors(self):
        with self.assertRaises(CommandError):
            run('query', map=self.map_path, label='object_99', labels=self.base + '.hlbl')
        with self.assertRaises(CommandError):
            run('query', map=self.map_path, label='object_01')
        with self.assertRaises(CommandError):
            run('query', map=self.map_path, vector='1,0')
        with self.assertRaises(CommandError):
            run('query', map=self.path('missing.npz'), vector='1,0')
