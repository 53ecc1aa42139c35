import filecmp
import io
import os
import shutil
import tempfile
import unittest
from dataclasses import replace

import logassert
import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from deskformer.errors import ConfigurationError
from matching.boxes import BoundingBox, LabeledObject, iou
from matching.factories import LabeledObjectFactory
from matching.logic import DuplicateIdentityError
from sequences import logic, motfiles, storage
from sequences.logic import SequenceGT, SynthConfig

SMALL = SynthConfig(
    n_objects=3, seq_len=8, image_width=32, image_height=32, min_size=6, max_size=10)


class SequenceGTTestCase(unittest.TestCase):

    def test_duplicate_identity(self):
        box = BoundingBox(0.5, 0.5, 0.1, 0.1)
        self.assertRaises(
            DuplicateIdentityError, SequenceGT,
            [[LabeledObject(3, box), LabeledObject(3, box)]], (32, 32))

    def test_detections_may_share_the_placeholder_identity(self):
        box = BoundingBox(0.5, 0.5, 0.1, 0.1)
        gt = SequenceGT([[LabeledObject(-1, box), LabeledObject(-1, box)]], (32, 32))
        self.assertEqual(gt.n_boxes, 2)

    def test_tracks(self):
        first = LabeledObjectFactory(identity=4)
        second = LabeledObjectFactory(identity=9)
        gt = SequenceGT([[first], [first, second], []], (64, 48))
        self.assertEqual(len(gt), 3)
        self.assertEqual(gt.identities(), [4, 9])
        self.assertEqual(gt.track(4), [(0, first), (1, first)])
        self.assertEqual(gt.n_boxes, 3)

    def test_relabeled(self):
        first = LabeledObjectFactory(identity=1)
        gt = SequenceGT([[first]], (64, 48))
        self.assertEqual(logic.relabeled(gt, {1: 5}).identities(), [5])


class SynthConfigTestCase(unittest.TestCase):

    def test_invalid(self):
        self.assertRaises(ConfigurationError, SynthConfig, n_objects=0)
        self.assertRaises(ConfigurationError, SynthConfig, seq_len=1)
        self.assertRaises(ConfigurationError, SynthConfig, min_size=20, max_size=10)
        self.assertRaises(ConfigurationError, SynthConfig, max_size=64)
        self.assertRaises(ConfigurationError, SynthConfig, crossing_prob=1.5)


class GenerateSequenceTestCase(unittest.TestCase):

    def test_shapes(self):
        frames, gt = logic.generate_sequence(SMALL)
        self.assertEqual(len(frames), 8)
        self.assertEqual(len(gt), 8)
        for frame in frames:
            self.assertEqual(frame.shape, (32, 32))
            self.assertEqual(frame.dtype, np.uint8)
        self.assertEqual(gt.image_size, (32, 32))

    def test_reproducible(self):
        first_frames, first_gt = logic.generate_sequence(SMALL)
        second_frames, second_gt = logic.generate_sequence(SMALL)
        for first, second in zip(first_frames, second_frames):
            np.testing.assert_array_equal(first, second)
        self.assertEqual(first_gt, second_gt)

    def test_seed_matters(self):
        first, _ = logic.generate_sequence(SMALL)
        second, _ = logic.generate_sequence(replace(SMALL, seed=1))
        self.assertFalse(all((a == b).all() for a, b in zip(first, second)))

    def test_single_object_spans_the_sequence(self):
        _, gt = logic.generate_sequence(replace(SMALL, n_objects=1))
        self.assertEqual(gt.identities(), [1])
        self.assertEqual([len(objects) for objects in gt.frames], [1] * 8)

    def test_boxes_stay_inside(self):
        config = replace(SMALL, max_speed=6.0, motion_noise=1.0, seq_len=30)
        _, gt = logic.generate_sequence(config)
        for objects in gt.frames:
            for obj in objects:
                x1, y1, x2, y2 = obj.box.corners
                self.assertGreaterEqual(min(x1, y1), -1e-12)
                self.assertLessEqual(max(x2, y2), 1 + 1e-12)

    def test_crossing_occludes(self):
        config = replace(SMALL, n_objects=2, crossing_prob=1.0, seq_len=9)
        _, gt = logic.generate_sequence(config)
        meeting = gt.frames[4]
        first = next(obj for obj in meeting if obj.identity == 1)
        second = next(obj for obj in meeting if obj.identity == 2)
        self.assertAlmostEqual(first.box.cx, 0.5, places=9)
        self.assertAlmostEqual(second.box.cy, 0.5, places=9)
        self.assertGreater(iou(first.box, second.box), 0.3)
        # the higher identity is drawn on top
        self.assertLess(first.visibility, 1.0)
        self.assertEqual(second.visibility, 1.0)

    def test_births_and_deaths(self):
        config = replace(SMALL, birth_prob=1.0, death_prob=0.3, seq_len=10)
        _, gt = logic.generate_sequence(config)
        self.assertGreater(len(gt.identities()), 3)
        for identity in gt.identities():
            indexes = [index for index, _ in gt.track(identity)]
            self.assertEqual(indexes, list(range(indexes[0], indexes[-1] + 1)))

    def test_ground_truth_over_random_configs(self):
        rng = np.random.default_rng(2024)
        for trial in range(1000):
            width, height = (int(side) for side in rng.integers(12, 25, size=2))
            min_size = float(rng.uniform(1, 4))
            config = SynthConfig(
                n_objects=int(rng.integers(1, 5)), seq_len=int(rng.integers(2, 5)),
                image_width=width, image_height=height,
                min_speed=0.0, max_speed=float(rng.uniform(0, 8)),
                min_size=min_size, max_size=float(rng.uniform(min_size, 10)),
                birth_prob=float(rng.random()), death_prob=float(rng.random()),
                crossing_prob=float(rng.random()), motion_noise=float(rng.uniform(0, 2)),
                seed=trial)
            _, gt = logic.generate_sequence(config)
            self.assertEqual(len(gt), config.seq_len)
            for objects in gt.frames:
                identities = [obj.identity for obj in objects]
                self.assertEqual(len(identities), len(set(identities)), config)
                for obj in objects:
                    self.assertGreater(obj.box.area, 0, config)
                    x1, y1, x2, y2 = obj.box.corners
                    self.assertGreaterEqual(min(x1, y1), -1e-9, config)
                    self.assertLessEqual(max(x2, y2), 1 + 1e-9, config)
                    self.assertTrue(0 <= obj.visibility <= 1, config)
            for identity in gt.identities():
                indexes = [index for index, _ in gt.track(identity)]
                self.assertEqual(indexes, list(range(indexes[0], indexes[-1] + 1)), config)


class SyntheticDetectionsTestCase(unittest.TestCase):

    def test_exact_detections(self):
        config = replace(SMALL, det_miss_prob=0, det_jitter_frac=0, det_false_prob=0)
        _, gt = logic.generate_sequence(config)
        detections = logic.synthetic_detections(gt, config)
        for gt_objects, det_objects in zip(gt.frames, detections.frames):
            self.assertEqual([d.identity for d in det_objects], [-1] * len(gt_objects))
            for obj, det in zip(gt_objects, det_objects):
                np.testing.assert_allclose(det.box.as_array(), obj.box.as_array())

    def test_misses(self):
        config = replace(SMALL, det_miss_prob=1.0, det_false_prob=0)
        _, gt = logic.generate_sequence(config)
        self.assertEqual(logic.synthetic_detections(gt, config).n_boxes, 0)


class MotLineTestCase(unittest.TestCase):

    def test_result_line(self):
        record = motfiles.parse_line("3,7,10.5,20,30,40,0.85,-1,-1,-1")
        self.assertEqual((record.frame, record.identity), (3, 7))
        self.assertEqual((record.left, record.top, record.width, record.height),
                         (10.5, 20.0, 30.0, 40.0))
        self.assertEqual(record.confidence, 0.85)
        self.assertFalse(record.is_ground_truth)

    def test_ground_truth_line(self):
        record = motfiles.parse_line("1,2,5,5,10,20,1,1,0.75")
        self.assertTrue(record.is_ground_truth)
        self.assertEqual(record.extra, (1.0, 0.75))

    def test_errors_carry_the_line_number(self):
        bad_lines = [
            "1,2,3,4,5",
            "1,2,a,4,5,6,1,-1,-1,-1",
            "1.5,2,3,4,5,6,1,-1,-1,-1",
            "0,2,3,4,5,6,1,-1,-1,-1",
            "1,2,3,4,-5,6,1,-1,-1,-1",
            "1,2,3,4,5,nan,1,-1,-1,-1",
        ]
        for line in bad_lines:
            with self.assertRaises(motfiles.MotParseError) as cm:
                motfiles.parse_line(line, 12)
            self.assertEqual(cm.exception.line_number, 12)
            self.assertIn("line 12", str(cm.exception))

    def test_format(self):
        record = motfiles.MotRecord(1, 2, 10, 20.125, 30, 40, 0.5)
        self.assertEqual(
            motfiles.format_record(record), "1,2,10.00,20.12,30.00,40.00,0.50,-1,-1,-1")
        gt = replace(record, confidence=1, extra=(1, 0.25))
        self.assertEqual(motfiles.format_record(gt), "1,2,10.00,20.12,30.00,40.00,1.00,1,0.25")


class MotFileTestCase(unittest.TestCase):

    def setUp(self):
        logassert.setup(self, 'sequences.motfiles')

    def test_read_sorts_and_skips_blank_lines(self):
        text = "2,1,0,0,4,4,1,-1,-1,-1\n\n1,3,0,0,4,4,1,-1,-1,-1\n1,2,0,0,4,4,1,-1,-1,-1\n"
        records = motfiles.read_mot(io.StringIO(text))
        self.assertEqual([(r.frame, r.identity) for r in records], [(1, 2), (1, 3), (2, 1)])
        self.assertEqual(records[0].line_number, 4)

    def test_written_text_is_stable(self):
        text = "1,1,1.23,4.56,7.89,10.11,0.93,-1,-1,-1\n2,1,1.50,4.00,8.00,10.00,0.80,-1,-1,-1\n"
        out = io.StringIO()
        motfiles.write_mot(motfiles.read_mot(io.StringIO(text)), out)
        self.assertEqual(out.getvalue(), text)

    def test_ignored_ground_truth(self):
        text = (
            "1,1,0,0,8,8,1,1,1\n"
            "1,2,8,8,8,8,0,1,1\n"
            "1,3,16,16,8,8,1,7,1\n")
        gt = motfiles.records_to_sequence(motfiles.read_mot(io.StringIO(text)), (32, 32))
        self.assertEqual(gt.identities(), [1])

    def test_repeated_identity(self):
        text = "1,1,0,0,8,8,1,-1,-1,-1\n1,1,4,4,8,8,1,-1,-1,-1\n"
        records = motfiles.read_mot(io.StringIO(text))
        self.assertRaises(
            motfiles.MotParseError, motfiles.records_to_sequence, records, (32, 32))

    def test_frame_beyond_the_sequence(self):
        records = motfiles.read_mot(io.StringIO("5,1,0,0,8,8,1,-1,-1,-1\n"))
        self.assertRaises(
            motfiles.MotParseError, motfiles.records_to_sequence, records, (32, 32), 4)

    def test_box_without_area_is_skipped(self):
        records = motfiles.read_mot(io.StringIO("1,1,0,0,0,8,1,-1,-1,-1\n"))
        gt = motfiles.records_to_sequence(records, (32, 32))
        self.assertEqual(gt.n_boxes, 0)
        self.assertLoggedWarning("Skipping box without area", "line 1")

    def test_normalization(self):
        box = motfiles.normalize((8, 4, 16, 8), (32, 16))
        self.assertEqual(box, BoundingBox(0.5, 0.5, 0.5, 0.5))
        self.assertEqual(motfiles.denormalize(box, (32, 16)), (8.0, 4.0, 16.0, 8.0))

    def test_sequence_records(self):
        gt = SequenceGT([[LabeledObject(3, BoundingBox(0.5, 0.5, 0.25, 0.5), visibility=0.5)]],
                        (32, 16))
        record, = motfiles.sequence_to_records(gt, ground_truth=True)
        self.assertEqual((record.frame, record.identity), (1, 3))
        self.assertEqual((record.left, record.top, record.width, record.height),
                         (12.0, 4.0, 8.0, 8.0))
        self.assertEqual(record.extra, (1, 0.5))
        back = motfiles.records_to_sequence([record], (32, 16))
        self.assertEqual(back.frames[0][0].box, gt.frames[0][0].box)
        self.assertEqual(back.frames[0][0].visibility, 0.5)

    def test_not_ascii(self):
        tmpdir = tempfile.mkdtemp()
        self.addCleanup(shutil.rmtree, tmpdir)
        path = os.path.join(tmpdir, 'gt.txt')
        with open(path, 'wb') as fh:
            fh.write("1,1,0,0,8,8,1,1,1\n1,2,0,0,8,8,1,1,1 # caf\u00e9\n".encode('utf-8'))
        with self.assertRaises(motfiles.MotParseError) as cm:
            motfiles.read_mot(path)
        self.assertIn(path, str(cm.exception))


class StorageTestCase(unittest.TestCase):

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        self.directory = os.path.join(self.tmpdir, 'SYNTH')

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def test_round_trip(self):
        sequence = logic.simulate('SYNTH', SMALL)
        storage.save_sequence(sequence, self.directory)
        loaded = storage.load_sequence(self.directory)

        self.assertEqual(loaded.name, 'SYNTH')
        self.assertEqual(loaded.seed, SMALL.seed)
        self.assertEqual(loaded.image_size, (32, 32))
        for saved, read in zip(sequence.frames, loaded.frames):
            np.testing.assert_array_equal(saved, read)
        self.assertEqual(loaded.gt.identities(), sequence.gt.identities())
        for saved, read in zip(sequence.gt.frames, loaded.gt.frames):
            for a, b in zip(saved, read):
                np.testing.assert_allclose(a.box.as_array(), b.box.as_array(), atol=0.01 / 32)
        self.assertEqual(len(loaded.detections), len(sequence))

    def test_layout(self):
        storage.save_sequence(logic.simulate('SYNTH', SMALL), self.directory)
        self.assertTrue(os.path.exists(os.path.join(self.directory, 'img1', '000001.png')))
        self.assertTrue(os.path.exists(os.path.join(self.directory, 'img1', '000008.png')))
        self.assertTrue(os.path.exists(storage.gt_path(self.directory)))
        self.assertTrue(os.path.exists(storage.det_path(self.directory)))
        info = storage.read_seqinfo(self.directory)
        self.assertEqual(info['length'], 8)
        self.assertEqual(storage.find_sequences(self.tmpdir), [self.directory])
        self.assertEqual(storage.find_sequences(self.directory), [self.directory])

    def test_missing_pieces(self):
        self.assertRaises(storage.SequenceLayoutError, storage.read_seqinfo, self.directory)
        storage.save_sequence(logic.simulate('SYNTH', SMALL), self.directory)
        os.remove(os.path.join(self.directory, 'img1', '000003.png'))
        self.assertRaises(storage.SequenceLayoutError, storage.load_frames, self.directory)
        os.remove(storage.gt_path(self.directory))
        self.assertRaises(storage.SequenceLayoutError, storage.load_gt, self.directory)

    def test_without_detections(self):
        sequence = replace(logic.simulate('SYNTH', SMALL), detections=None)
        storage.save_sequence(sequence, self.directory)
        self.assertIsNone(storage.load_detections(self.directory))


class SimulateCommandTestCase(SimpleTestCase):

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def simulate(self, *args):
        out = io.StringIO()
        call_command('simulate', *args, stdout=out)
        return out.getvalue()

    def test_writes_a_readable_sequence(self):
        output = self.simulate(self.tmpdir, '--seed', '3')
        self.assertTrue(output.startswith("# deskformer simulate seed=3\n"))
        directory = os.path.join(self.tmpdir, 'SYNTH')
        sequence = storage.load_sequence(directory)
        self.assertEqual(sequence.seed, 3)
        self.assertEqual(len(sequence), 6)

    def test_same_seed_same_files(self):
        first, second = os.path.join(self.tmpdir, 'a'), os.path.join(self.tmpdir, 'b')
        self.simulate(first, '--seed', '5')
        self.simulate(second, '--seed', '5')
        for root, _, files in os.walk(os.path.join(first, 'SYNTH')):
            for name in files:
                path = os.path.join(root, name)
                other = os.path.join(second, os.path.relpath(path, first))
                self.assertTrue(filecmp.cmp(path, other, shallow=False), path)

    def test_several_sequences(self):
        self.simulate(self.tmpdir, '--count', '2', '--name', 'TOY', '--set', 'seq_len=3')
        self.assertEqual(
            [os.path.basename(d) for d in storage.find_sequences(self.tmpdir)],
            ['TOY-01', 'TOY-02'])
        self.assertEqual(storage.read_seqinfo(os.path.join(self.tmpdir, 'TOY-02'))['length'], 3)

    def test_config_file(self):
        config = os.path.join(self.tmpdir, 'run.cfg')
        with open(config, 'wt') as fh:
            fh.write("# smaller\nseq_len = 4\nn_objects=2\n")
        self.simulate(os.path.join(self.tmpdir, 'out'), '--config', config, '--seq-len', '3')
        sequence = storage.load_sequence(os.path.join(self.tmpdir, 'out', 'SYNTH'))
        self.assertEqual(len(sequence), 3)

    def test_no_objects(self):
        with self.assertRaises(CommandError) as cm:
            self.simulate(self.tmpdir, '--n-objects', '0')
        self.assertTrue(str(cm.exception).startswith("ConfigurationError: "))

    def test_unknown_key(self):
        with self.assertRaises(CommandError) as cm:
            self.simulate(self.tmpdir, '--set', 'colour=red')
        self.assertIn("Unknown configuration key 'colour'", str(cm.exception))
