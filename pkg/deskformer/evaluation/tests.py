import io
import itertools
import os
import shutil
import tempfile
import unittest

import logassert
import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from evaluation import logic
from evaluation.logic import MetricReport
from matching.boxes import BoundingBox, LabeledObject, iou
from sequences import logic as sequences, storage
from sequences.logic import SequenceGT, SynthConfig, relabeled
from sequences.motfiles import sequence_to_records, write_mot

A = (0.3, 0.3, 0.1, 0.1)
C = (0.7, 0.3, 0.1, 0.1)
SIZE = (100, 100)


def build(*frames):
    """SequenceGT from frames given as lists of (identity, (cx, cy, w, h))."""
    return SequenceGT(
        [[LabeledObject(identity, BoundingBox(*box)) for identity, box in objects]
         for objects in frames],
        SIZE)


class MetricReportTestCase(unittest.TestCase):

    def test_mota_from_counts(self):
        report = MetricReport(gt_total=100, fp=10, fn=10, id_switches=2)
        self.assertAlmostEqual(report.mota, 0.78)

    def test_mota_can_be_negative(self):
        report = MetricReport(gt_total=2, hyp_total=5, fp=5, fn=2)
        self.assertAlmostEqual(report.mota, -2.5)

    def test_ratios_without_boxes(self):
        report = MetricReport()
        self.assertEqual((report.mota, report.idf1, report.recall, report.precision),
                         (1.0, 1.0, 1.0, 1.0))

    def test_total_sums_counts_first(self):
        first = MetricReport(name='S1', gt_total=10, hyp_total=15, matches=10, fp=5, idtp=10)
        second = MetricReport(name='S2', gt_total=90, hyp_total=90, matches=90, idtp=90)
        combined = logic.total([first, second])
        self.assertEqual(combined.name, 'ALL')
        self.assertEqual((combined.gt_total, combined.fp), (100, 5))
        self.assertAlmostEqual(combined.mota, 0.95)
        self.assertAlmostEqual(combined.idf1, 200 / 205)
        # not the mean of the per-sequence figures
        self.assertNotAlmostEqual(combined.mota, (first.mota + second.mota) / 2)


class ClearMotTestCase(unittest.TestCase):

    def test_perfect(self):
        gt = build([(1, A), (2, C)], [(1, A), (2, C)], [(2, C)])
        hyp = relabeled(gt, {1: 7, 2: 9})
        report = logic.evaluate('S', gt, hyp)
        self.assertEqual((report.fp, report.fn, report.id_switches), (0, 0, 0))
        self.assertEqual((report.mt, report.ml, report.gt_tracks), (2, 0, 2))
        self.assertEqual(report.mota, 1.0)
        self.assertEqual(report.idf1, 1.0)

    def test_swap(self):
        gt = build(*[[(1, A), (2, C)]] * 4)
        hyp = build([(10, A), (20, C)], [(10, A), (20, C)],
                    [(20, A), (10, C)], [(20, A), (10, C)])
        report = logic.evaluate('S', gt, hyp)
        self.assertEqual(report.id_switches, 2)
        self.assertEqual((report.fp, report.fn), (0, 0))
        self.assertAlmostEqual(report.mota, 0.75)
        self.assertEqual(report.idtp, 4)
        self.assertAlmostEqual(report.idf1, 0.5)

    def test_empty_hypotheses(self):
        gt = build([(1, A)], [(1, A)], [(1, A), (2, C)])
        report = logic.evaluate('S', gt, build([], [], []))
        self.assertEqual((report.fn, report.fp, report.matches), (4, 0, 0))
        self.assertEqual(report.mota, 0.0)
        self.assertEqual(report.idf1, 0.0)
        self.assertEqual(report.ml, 2)

    def test_both_empty(self):
        report = logic.evaluate('S', build([], []), build([], []))
        self.assertEqual(report.mota, 1.0)
        self.assertEqual(report.idf1, 1.0)
        self.assertEqual(report.gt_tracks, 0)

    def test_previous_match_is_kept(self):
        near_a = (0.32, 0.3, 0.1, 0.1)
        gt = build([(1, A)], [(1, A)])
        hyp = build([(10, near_a)], [(10, near_a), (11, A)])
        report = logic.clear_mot(gt, hyp)
        self.assertEqual(report.id_switches, 0)
        self.assertEqual((report.matches, report.fp), (2, 1))

    def test_iou_threshold(self):
        gt = build([(1, A)])
        hyp = build([(10, (0.34, 0.3, 0.1, 0.1))])
        report = logic.clear_mot(gt, hyp)
        self.assertEqual((report.fp, report.fn), (1, 1))
        report = logic.clear_mot(gt, hyp, iou_threshold=0.4)
        self.assertEqual((report.fp, report.fn, report.matches), (0, 0, 1))

    def test_track_coverage(self):
        gt = build(*[[(1, A), (2, C), (3, (0.5, 0.7, 0.1, 0.1))]] * 5)
        hyp = build([(10, A), (20, C), (30, (0.5, 0.7, 0.1, 0.1))],
                    [(10, A), (30, (0.5, 0.7, 0.1, 0.1))],
                    [(10, A)], [(10, A)], [])
        report = logic.clear_mot(gt, hyp)
        # 4/5 mostly tracked, 1/5 mostly lost, 2/5 neither
        self.assertEqual((report.mt, report.ml, report.gt_tracks), (1, 1, 3))

    def test_hypotheses_beyond_the_gt_frames(self):
        gt = build([(1, A)])
        hyp = build([(10, A)], [(10, A)])
        report = logic.clear_mot(gt, hyp)
        self.assertEqual((report.matches, report.fp, report.hyp_total), (1, 1, 2))


class IdentityMetricsTestCase(unittest.TestCase):

    def random_sequence(self, rng, n_tracks, first_identity):
        frames = []
        for _ in range(6):
            objects = []
            for k in range(n_tracks):
                if rng.random() < 0.7:
                    cx = rng.choice([0.3, 0.32, 0.5])
                    cy = rng.choice([0.3, 0.7])
                    objects.append((first_identity + k, (cx, cy, 0.1, 0.1)))
            frames.append(objects)
        return build(*frames)

    def brute_force_idtp(self, gt, hyp):
        gt_ids, hyp_ids = gt.identities(), hyp.identities()
        counts = np.zeros((len(gt_ids), len(hyp_ids)))
        for gts, hyps in zip(gt.frames, hyp.frames):
            for g in gts:
                for h in hyps:
                    if iou(g.box, h.box) >= logic.IOU_THRESHOLD:
                        counts[gt_ids.index(g.identity), hyp_ids.index(h.identity)] += 1
        if len(gt_ids) > len(hyp_ids):
            counts = counts.T
        rows, cols = counts.shape
        if not rows:
            return 0
        return max(sum(counts[i, perm[i]] for i in range(rows))
                   for perm in itertools.permutations(range(cols), rows))

    def test_against_brute_force(self):
        for seed in range(25):
            rng = np.random.default_rng(seed)
            gt = self.random_sequence(rng, int(rng.integers(1, 4)), 1)
            hyp = self.random_sequence(rng, int(rng.integers(1, 4)), 10)
            self.assertEqual(logic.identity_true_positives(gt, hyp),
                             self.brute_force_idtp(gt, hyp), seed)

    def test_symmetric(self):
        rng = np.random.default_rng(5)
        gt = self.random_sequence(rng, 3, 1)
        hyp = self.random_sequence(rng, 3, 10)
        self.assertAlmostEqual(logic.idf1(gt, hyp), logic.idf1(hyp, gt))
        renamed = relabeled(hyp, {10: 12, 11: 10, 12: 11})
        self.assertAlmostEqual(logic.idf1(gt, hyp), logic.idf1(gt, renamed))

    def test_overlap_counts(self):
        gt = build([(1, A)], [(1, A)], [(1, A)])
        hyp = build([(10, A)], [(20, A)], [(20, A)])
        gt_ids, hyp_ids, counts = logic.identity_overlaps(gt, hyp)
        self.assertEqual((gt_ids, hyp_ids), ([1], [10, 20]))
        self.assertEqual(counts.tolist(), [[1, 2]])
        self.assertAlmostEqual(logic.idf1(gt, hyp), 2 * 2 / 6)


class ReportFormatTestCase(unittest.TestCase):

    def setUp(self):
        logassert.setup(self, 'evaluation.logic')
        gt = build([(1, A)], [(1, A)])
        self.reports = [logic.evaluate('SYNTH', gt, gt)]
        self.reports.append(logic.total(self.reports))

    def test_evaluation_is_logged(self):
        self.assertLoggedInfo("SYNTH: MOTA 1.000 IDF1 1.000")

    def test_table(self):
        lines = logic.format_table(self.reports).splitlines()
        self.assertEqual(lines[0].split()[:3], ['Sequence', 'MOTA', 'IDF1'])
        self.assertIn('ID Sw.', lines[0])
        self.assertEqual(lines[1].split()[:3], ['SYNTH', '100.0', '100.0'])
        self.assertEqual(lines[2].split()[0], 'ALL')
        self.assertEqual(len(lines), 3)

    def test_csv(self):
        out = io.StringIO()
        logic.write_csv(self.reports, out)
        lines = out.getvalue().splitlines()
        self.assertEqual(lines[0], ','.join(logic.CSV_COLUMNS))
        self.assertTrue(lines[1].startswith('SYNTH,1.000000,1.000000,1,0,0,0,0,'))
        self.assertTrue(lines[2].startswith('ALL,'))


class EvalCommandTestCase(SimpleTestCase):

    def setUp(self):
        logassert.setup(self, 'evaluation.management.commands.eval')
        self.tmpdir = tempfile.mkdtemp()
        self.data = os.path.join(self.tmpdir, 'data')
        self.results = os.path.join(self.tmpdir, 'results')
        os.makedirs(self.results)
        for index in (1, 2):
            name = 'SYNTH-{:02d}'.format(index)
            config = SynthConfig(**dict(settings.SYNTH, seed=index))
            storage.save_sequence(
                sequences.simulate(name, config), os.path.join(self.data, name))

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def write_perfect_results(self, name):
        gt = storage.load_gt(os.path.join(self.data, name))
        path = os.path.join(self.results, name + '.txt')
        write_mot(sequence_to_records(gt), path)
        return path

    def evaluate(self, *args):
        out = io.StringIO()
        call_command('eval', *args, stdout=out)
        return out.getvalue()

    def test_perfect_results(self):
        self.write_perfect_results('SYNTH-01')
        self.write_perfect_results('SYNTH-02')
        csv_path = os.path.join(self.tmpdir, 'report.csv')
        output = self.evaluate(self.data, self.results, '--csv', csv_path, '--seed', '3')
        lines = output.splitlines()
        self.assertEqual(lines[0], "# deskformer eval seed=3")
        self.assertEqual([line.split()[0] for line in lines[2:]], ['SYNTH-01', 'SYNTH-02', 'ALL'])
        for line in lines[2:]:
            self.assertEqual(line.split()[1], '100.0')
        with open(csv_path) as fh:
            written = fh.read().splitlines()
        self.assertEqual(written[0], "# deskformer eval seed=3")
        self.assertEqual(written[1], ','.join(logic.CSV_COLUMNS))
        self.assertEqual(len(written), 5)

    def test_single_results_file(self):
        path = self.write_perfect_results('SYNTH-01')
        output = self.evaluate(os.path.join(self.data, 'SYNTH-01'), path)
        self.assertEqual(output.splitlines()[1].split()[:2], ['SYNTH-01', '100.0'])

    def test_empty_results(self):
        open(os.path.join(self.results, 'SYNTH-01.txt'), 'w').close()
        output = self.evaluate(os.path.join(self.data, 'SYNTH-01'), self.results)
        self.assertEqual(output.splitlines()[1].split()[:3], ['SYNTH-01', '0.0', '0.0'])

    def test_missing_results(self):
        self.write_perfect_results('SYNTH-01')
        with self.assertRaises(CommandError) as cm:
            self.evaluate(self.data, self.results)
        self.assertEqual(str(cm.exception), "SequenceLayoutError: no results for: SYNTH-02")
        self.assertLoggedError("No results for")

    def test_missing_ground_truth(self):
        with self.assertRaises(CommandError) as cm:
            self.evaluate(os.path.join(self.tmpdir, 'nowhere'), self.results)
        self.assertTrue(str(cm.exception).startswith("SequenceLayoutError: "))
