"""Experiment-scale runs: overfit one frame pair, or one synthetic sequence and then track and
score it.

These take minutes of CPU; they only run with DESKFORMER_SLOW_TESTS set.
"""

import csv
import io
import os
import shutil
import tempfile
import unittest

from django.core.management import call_command
from django.test import SimpleTestCase

from deskformer.settings import Base
from network.transformer import ModelConfig, TrackingTransformer
from sequences.logic import Sequence, SequenceGT, SynthConfig, generate_sequence
from training.augment import AugmentConfig
from training.logic import Trainer, TrainingConfig, read_training_log

SLOW = bool(os.environ.get('DESKFORMER_SLOW_TESTS'))


@unittest.skipUnless(SLOW, "set DESKFORMER_SLOW_TESTS to run the experiments")
class OverfitExperimentTestCase(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmpdir = tempfile.mkdtemp()
        cls.config = os.path.join(cls.tmpdir, 'desk.cfg')
        values = {}
        for component in (Base.NETWORK, Base.SYNTH, Base.AUGMENT, Base.TRAINING, Base.TRACKER):
            values.update(component)
        # one crossing of the first two objects, no births or deaths
        values.update(crossing_prob=1.0, steps=5000, log_every=500, checkpoint_every=1000)
        with open(cls.config, 'wt') as fh:
            fh.writelines('{}={}\n'.format(key, value) for key, value in sorted(values.items()))

        cls.data = os.path.join(cls.tmpdir, 'data')
        cls.run_dir = os.path.join(cls.tmpdir, 'run')
        cls.call('simulate', cls.data)
        cls.call('train', cls.data, '--output', cls.run_dir)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmpdir)
        super().tearDownClass()

    @classmethod
    def call(cls, name, *args):
        call_command(name, *args, '--config', cls.config, '--seed', '0', stdout=io.StringIO())

    def scores(self, *track_args):
        results = tempfile.mkdtemp(dir=self.tmpdir)
        self.call('track', os.path.join(self.run_dir, 'model.ckpt'), self.data,
                  '--output', results, *track_args)
        report = os.path.join(results, 'report.csv')
        call_command('eval', self.data, results, '--csv', report, stdout=io.StringIO())
        with open(report) as fh:
            rows = list(csv.DictReader(fh))
        return rows[0]

    def test_track_queries(self):
        row = self.scores()
        self.assertGreaterEqual(float(row['mota']), 0.9)
        self.assertGreaterEqual(float(row['idf1']), 0.9)
        self.assertEqual(int(row['id_switches']), 0)

    def test_without_track_queries(self):
        with_queries = float(self.scores()['idf1'])
        without = float(self.scores('--no-track-queries')['idf1'])
        self.assertGreaterEqual(with_queries - without, 0.1)


@unittest.skipUnless(SLOW, "set DESKFORMER_SLOW_TESTS to run the experiments")
class SinglePairOverfitTestCase(SimpleTestCase):

    def test_loss_goes_below_a_tenth(self):
        synth = SynthConfig(**dict(Base.SYNTH, n_objects=2, seq_len=2, crossing_prob=0.0))
        frames, gt = generate_sequence(synth)
        # identical frames, no augmentation
        still = SequenceGT([gt.frames[0]] * 2, gt.image_size)
        sequence = Sequence('pair', [frames[0], frames[0]], still)
        quiet = AugmentConfig(p_fn=0, p_fp=0, frame_range=1, jitter_frac=0)
        model = TrackingTransformer(ModelConfig(**Base.NETWORK))
        trainer = Trainer(model, [sequence], quiet, TrainingConfig(**Base.TRAINING))
        log = io.StringIO()
        trainer.run(log)
        totals = [row[1] for row in read_training_log(io.StringIO(log.getvalue()))]
        self.assertEqual(len(totals), Base.TRAINING['steps'])
        self.assertLess(min(totals), 0.1)
