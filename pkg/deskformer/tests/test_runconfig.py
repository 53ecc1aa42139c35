"""Tests for the layered run configuration."""

import os
import shutil
import tempfile

from django.conf import settings
from django.test import SimpleTestCase, override_settings

from deskformer import runconfig
from deskformer.runconfig import ConfigurationError, build_run_config
from network.transformer import ModelConfig
from tracker.logic import FILTER_IOU, TrackerConfig


class BuildRunConfigTestCase(SimpleTestCase):

    def test_settings_defaults(self):
        run_config = build_run_config()
        self.assertEqual(run_config.network, ModelConfig(**settings.NETWORK))
        self.assertEqual(run_config.tracker, TrackerConfig(**settings.TRACKER))
        self.assertEqual(run_config.seed, settings.SEED)

    def test_flags_beat_file(self):
        run_config = build_run_config(
            {'sigma_track': '0.5', 'd_model': '32'}, {'sigma_track': '0.6'})
        self.assertEqual(run_config.tracker.sigma_track, 0.6)
        self.assertEqual(run_config.network.d_model, 32)

    def test_seed(self):
        run_config = build_run_config({'seed': '3'}, {'seed': '4'})
        self.assertEqual(run_config.seed, 4)
        run_config = build_run_config({'seed': '3'}, {'seed': '4'}, seed=5)
        self.assertEqual((run_config.seed, run_config.augment.seed, run_config.synth.seed),
                         (5, 5, 5))

    def test_coercion(self):
        run_config = build_run_config(flag_values={
            'use_track_queries': 'off', 'filter_mode': FILTER_IOU, 't_track_reid': '2'})
        self.assertIs(run_config.tracker.use_track_queries, False)
        self.assertEqual(run_config.tracker.filter_mode, FILTER_IOU)
        self.assertEqual(run_config.tracker.t_track_reid, 2)

    def test_bad_values(self):
        self.assertRaises(
            ConfigurationError, build_run_config, None, {'use_track_queries': 'maybe'})
        self.assertRaises(ConfigurationError, build_run_config, None, {'d_model': 'wide'})
        self.assertRaises(ConfigurationError, build_run_config, None, {'seed': 'x'})
        # d_model not divisible by n_heads
        self.assertRaises(ConfigurationError, build_run_config, None, {'n_heads': '3'})

    def test_unknown_key(self):
        with self.assertRaises(ConfigurationError) as cm:
            build_run_config({'sigma_tracks': '0.5'})
        self.assertIn("sigma_tracks", str(cm.exception))

    @override_settings(TRACKER={'sigma_track': 0.5, 'patience': 3})
    def test_unknown_key_in_settings(self):
        self.assertRaises(ConfigurationError, build_run_config)

    @override_settings(TRACKER={'sigma_track': 0.5})
    def test_partial_settings(self):
        run_config = build_run_config()
        self.assertEqual(run_config.tracker, TrackerConfig(sigma_track=0.5))


class ConfigFileTestCase(SimpleTestCase):

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        self.path = os.path.join(self.tmpdir, 'run.cfg')

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def write(self, text):
        with open(self.path, 'wt') as fh:
            fh.write(text)

    def test_parse(self):
        self.write("# tracker\nsigma_track = 0.5  # lower\n\nseed=9\n")
        self.assertEqual(runconfig.parse_config_file(self.path),
                         {'sigma_track': '0.5', 'seed': '9'})

    def test_malformed_line(self):
        self.write("sigma_track 0.5\n")
        with self.assertRaises(ConfigurationError) as cm:
            runconfig.parse_config_file(self.path)
        self.assertIn(self.path, str(cm.exception))

    def test_missing_file(self):
        self.assertRaises(ConfigurationError, runconfig.parse_config_file, self.path)

    def test_later_assignments_win(self):
        self.assertEqual(runconfig.parse_assignments(['lr=0.1', 'lr=0.2']), {'lr': '0.2'})
        self.assertRaises(ConfigurationError, runconfig.parse_assignments, ['=3'])

    def test_describe_is_readable_back(self):
        original = build_run_config(flag_values={'sigma_track': '0.55', 'aux_loss': 'true'},
                                    seed=12)
        self.write('\n'.join(runconfig.describe(original)) + '\n')
        self.assertEqual(build_run_config(runconfig.parse_config_file(self.path)), original)
