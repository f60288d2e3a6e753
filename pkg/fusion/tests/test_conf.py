import os
import tempfile
from unittest import mock

from django.core.exceptions import ImproperlyConfigured
from django.test import SimpleTestCase

from fusion.conf import FusionConfig, load_config


class ConfigFileTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def write(self, name, text):
        path = os.path.join(self.tmp.name, name)
        with open(path, 'w') as fh:
            fh.write(text)
        return path

    def test_sections_are_read_from_the_file(self):
        path = self.write('fusion.env', '# [solver]\nSOLVER_EPSILON=0.01\n# [pool]\nPOOL_BATCH_SIZE=2\n')
        config = FusionConfig.from_file(path)
        self.assertEqual(config.solver.epsilon, 0.01)
        self.assertEqual(config.pool.batch_size, 2)
        self.assertEqual(config.alignment.window, 16)

    def test_reading_a_file_leaves_the_process_environment_alone(self):
        path = self.write('fusion.env', 'SOLVER_EPSILON=0.01\n')
        with mock.patch.dict(os.environ, {}, clear=False):
            os.environ.pop('SOLVER_EPSILON', None)
            FusionConfig.from_file(path)
            self.assertNotIn('SOLVER_EPSILON', os.environ)
            self.assertEqual(load_config(self.write('other.env', 'POOL_BATCH_SIZE=3\n')).solver.epsilon, 1e-3)

    def test_file_keys_win_over_the_environment(self):
        path = self.write('fusion.env', 'SOLVER_EPSILON=0.01\n')
        with mock.patch.dict(os.environ, {'SOLVER_EPSILON': '0.5'}):
            self.assertEqual(FusionConfig.from_file(path).solver.epsilon, 0.01)
            self.assertEqual(os.environ['SOLVER_EPSILON'], '0.5')

    def test_missing_file(self):
        with self.assertRaises(ImproperlyConfigured):
            FusionConfig.from_file(os.path.join(self.tmp.name, 'missing.env'))

    def test_invalid_value(self):
        path = self.write('fusion.env', 'SOLVER_EPSILON=-1\n')
        with self.assertRaises(ImproperlyConfigured):
            FusionConfig.from_file(path)
