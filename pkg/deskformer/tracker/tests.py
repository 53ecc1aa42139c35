import filecmp
import io
import os
import shutil
import tempfile
import unittest
from dataclasses import replace
from types import SimpleNamespace

import factory.random
import logassert
import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from deskformer.errors import ConfigurationError
from matching.boxes import BoundingBox, iou_matrix
from network.checkpoint import save_checkpoint
from network.transformer import FramePrediction, ModelConfig, QuerySet, TrackingTransformer
from numerics.tensor import Tensor
from sequences import logic as sequences, storage
from sequences.logic import SequenceGT, SynthConfig
from tracker.baseline import GreedyCenterTracker
from tracker.factories import TrackStateFactory
from tracker.logic import (
    ACTIVE, FILTER_CENTER_DISTANCE, FILTER_IOU, INACTIVE, NmsCandidate, Tracker, TrackerConfig,
    filter_initializations, nms, track_sequence)

FRAME = np.zeros((8, 8), dtype=np.uint8)
FAR = (0.9, 0.9, 0.05, 0.05)
A = (0.3, 0.3, 0.1, 0.1)
C = (0.7, 0.3, 0.1, 0.1)


class ScriptedModel:
    """Decoder stand-in whose scores and boxes come from a per-frame script.

    Each script entry may hold 'tracks' ({identity: (score, box)}) and 'objects'
    ([(score, box), ...] for the first object slots); anything unscripted scores 0.
    Embeddings are [frame index, row, 0, 0].
    """
    D_MODEL = 4

    def __init__(self, script, n_object=3):
        self.script = script
        self.n_object = n_object
        self.config = SimpleNamespace(d_model=self.D_MODEL)
        self.frame = 0
        self.decoded_identities = []

    def query_set(self, tracks=None):
        object_queries = Tensor(np.zeros((self.n_object, self.D_MODEL)))
        if tracks is None:
            return QuerySet(object_queries=object_queries)
        return QuerySet(object_queries=object_queries, track_queries=tracks.track_queries,
                        track_identities=list(tracks.track_identities))

    def predict(self, prev_frame, curr_frame, queries):
        step = self.script[self.frame] if self.frame < len(self.script) else {}
        self.decoded_identities.append(list(queries.track_identities))
        scripted_tracks = step.get('tracks', {})
        rows = [scripted_tracks.get(identity, (0.0, FAR))
                for identity in queries.track_identities]
        objects = list(step.get('objects', []))
        rows += objects + [(0.0, FAR)] * (self.n_object - len(objects))

        scores = np.array([score for score, _ in rows])
        embeddings = np.zeros((len(rows), self.D_MODEL))
        embeddings[:, 0] = self.frame
        embeddings[:, 1] = np.arange(len(rows))
        self.frame += 1
        return FramePrediction(
            embeddings=Tensor(embeddings), boxes=Tensor(np.array([box for _, box in rows])),
            class_probs=Tensor(np.column_stack([scores, 1 - scores])))


def identities(emitted):
    return [obj.identity for obj in emitted]


class TrackerConfigTestCase(unittest.TestCase):

    def test_defaults(self):
        config = TrackerConfig()
        self.assertEqual((config.sigma_object, config.sigma_track, config.sigma_nms),
                         (0.4, 0.4, 0.9))
        self.assertEqual((config.t_track_reid, config.sigma_track_reid), (5, 0.4))

    def test_invalid(self):
        self.assertRaises(ConfigurationError, TrackerConfig, sigma_track=1.5)
        self.assertRaises(ConfigurationError, TrackerConfig, t_track_reid=-1)
        self.assertRaises(ConfigurationError, TrackerConfig, filter_mode='nearest')
        self.assertRaises(ConfigurationError, TrackerConfig, max_center_distance=0)


class TrackStateTestCase(unittest.TestCase):

    def test_deactivate(self):
        factory.random.reseed_random(1)
        track = TrackStateFactory(age=3)
        self.assertTrue(track.active)
        track.deactivate()
        self.assertEqual((track.status, track.age), (INACTIVE, 0))
        self.assertFalse(track.active)

    def test_as_object(self):
        track = TrackStateFactory(identity=7, box=BoundingBox(*A), score=0.75)
        obj = track.as_object()
        self.assertEqual((obj.identity, obj.box, obj.confidence), (7, BoundingBox(*A), 0.75))


class LifecycleTestCase(unittest.TestCase):

    def setUp(self):
        logassert.setup(self, 'tracker.logic')

    def test_full_lifecycle(self):
        moved = (0.32, 0.3, 0.1, 0.1)
        back = (0.35, 0.32, 0.1, 0.1)
        script = [
            {'objects': [(0.4, A), (0.39, C)]},
            {'tracks': {1: (0.9, moved)}},
            {'tracks': {1: (0.39, FAR)}},
            {'tracks': {1: (0.1, FAR)}},
            {'tracks': {1: (0.4, back)}},
        ] + [{'tracks': {1: (0.2, FAR)}}] * 7
        model = ScriptedModel(script)
        tracker = Tracker(model, TrackerConfig())

        emitted = tracker.step(FRAME)
        self.assertEqual(identities(emitted), [1])
        self.assertEqual(emitted[0].box, BoundingBox(*A))

        emitted = tracker.step(FRAME)
        self.assertEqual(emitted[0].box, BoundingBox(*moved))

        self.assertEqual(tracker.step(FRAME), [])
        track, = tracker.tracks
        self.assertEqual((track.status, track.age), (INACTIVE, 0))
        self.assertLoggedDebug("Track 1 inactive")

        self.assertEqual(tracker.step(FRAME), [])
        self.assertEqual((track.status, track.age), (INACTIVE, 1))
        # the query follows the decoder while the box stays where the track was lost
        self.assertEqual(track.query[0], 3)
        self.assertEqual(track.box, BoundingBox(*moved))

        emitted = tracker.step(FRAME)
        self.assertEqual(identities(emitted), [1])
        self.assertEqual(emitted[0].box, BoundingBox(*back))
        self.assertEqual(track.status, ACTIVE)
        self.assertLoggedDebug("Track 1 re-identified")

        self.assertEqual(tracker.step(FRAME), [])
        for age in range(1, 6):
            tracker.step(FRAME)
            self.assertEqual(tracker.tracks[0].age, age)
        tracker.step(FRAME)
        self.assertEqual(tracker.tracks, [])
        self.assertLoggedDebug("Track 1 deleted after 5 inactive frames")

        # inactive tracks were decoded all along
        self.assertEqual(model.decoded_identities[:4], [[], [1], [1], [1]])

    def test_identities_are_not_reused(self):
        script = [
            {'objects': [(0.9, A)]},
            {'tracks': {1: (0.1, FAR)}},
        ] + [{}] * 6 + [{'objects': [(0.9, C)]}]
        tracker = Tracker(ScriptedModel(script), TrackerConfig())
        for _ in range(8):
            tracker.step(FRAME)
        self.assertEqual(tracker.tracks, [])
        self.assertEqual(identities(tracker.step(FRAME)), [2])

    def test_reid_disabled(self):
        script = [
            {'objects': [(0.9, A)]},
            {'tracks': {1: (0.1, FAR)}},
            {'tracks': {1: (0.9, A)}},
        ]
        tracker = Tracker(ScriptedModel(script), TrackerConfig(t_track_reid=0))
        tracker.step(FRAME)
        tracker.step(FRAME)
        self.assertEqual(len(tracker.tracks), 1)
        # the only chance of an inactive track is the frame right after it was lost
        self.assertEqual(identities(tracker.step(FRAME)), [1])

    def test_duplicate_initializations(self):
        nearly_a = (0.3, 0.3, 0.1, 0.101)
        script = [{'objects': [(0.7, A), (0.8, nearly_a)]}]
        tracker = Tracker(ScriptedModel(script), TrackerConfig())
        emitted = tracker.step(FRAME)
        self.assertEqual(identities(emitted), [1])
        self.assertEqual(emitted[0].confidence, 0.8)

    def test_live_tracks_win_over_new_duplicates(self):
        script = [
            {'objects': [(0.5, A)]},
            {'tracks': {1: (0.5, A)}, 'objects': [(0.95, A)]},
        ]
        tracker = Tracker(ScriptedModel(script), TrackerConfig())
        tracker.step(FRAME)
        self.assertEqual(identities(tracker.step(FRAME)), [1])
        self.assertEqual(tracker.next_identity, 2)

    def test_converging_tracks(self):
        script = [
            {'objects': [(0.9, A), (0.9, C)]},
            {'tracks': {1: (0.6, A), 2: (0.9, A)}},
        ]
        tracker = Tracker(ScriptedModel(script), TrackerConfig())
        self.assertEqual(identities(tracker.step(FRAME)), [1, 2])
        self.assertEqual(identities(tracker.step(FRAME)), [2])
        self.assertEqual(tracker.tracks[0].status, INACTIVE)
        self.assertLoggedDebug("Track 1 suppressed by NMS")

    def test_public_detections_gate_initialization(self):
        script = [{'objects': [(0.9, A), (0.9, C)]}] * 2
        config = TrackerConfig(filter_mode=FILTER_IOU)
        tracker = Tracker(ScriptedModel(script), config)
        self.assertEqual(tracker.step(FRAME, []), [])
        emitted = tracker.step(FRAME, [BoundingBox(0.31, 0.3, 0.1, 0.1)])
        self.assertEqual([obj.box for obj in emitted], [BoundingBox(*A)])


class NmsTestCase(unittest.TestCase):

    def test_greedy(self):
        candidates = [
            NmsCandidate(BoundingBox(*A), 0.5),
            NmsCandidate(BoundingBox(0.3, 0.3, 0.1, 0.101), 0.9),
            NmsCandidate(BoundingBox(*C), 0.4),
        ]
        self.assertEqual(nms(candidates, 0.9), [1, 2])
        self.assertEqual(nms(candidates, 1.0), [0, 1, 2])
        self.assertEqual(nms([], 0.9), [])

    def test_tracks_win_ties(self):
        candidates = [
            NmsCandidate(BoundingBox(*A), 0.8),
            NmsCandidate(BoundingBox(*A), 0.8, is_track=True, identity=3),
        ]
        self.assertEqual(nms(candidates, 0.9), [1])

    def test_lower_identity_wins_ties(self):
        candidates = [
            NmsCandidate(BoundingBox(*A), 0.8, is_track=True, identity=5),
            NmsCandidate(BoundingBox(*A), 0.8, is_track=True, identity=2),
        ]
        self.assertEqual(nms(candidates, 0.9), [1])


class FilterInitializationsTestCase(unittest.TestCase):

    def setUp(self):
        self.candidates = [BoundingBox(*A), BoundingBox(0.33, 0.3, 0.1, 0.1), BoundingBox(*C)]

    def test_no_filter(self):
        self.assertEqual(filter_initializations(self.candidates, [], TrackerConfig()), [0, 1, 2])

    def test_iou(self):
        config = TrackerConfig(filter_mode=FILTER_IOU)
        dets = [BoundingBox(0.305, 0.3, 0.1, 0.1)]
        self.assertEqual(filter_initializations(self.candidates, dets, config), [0])
        dets.append(BoundingBox(0.33, 0.3, 0.1, 0.1))
        self.assertEqual(filter_initializations(self.candidates, dets, config), [0, 1])

    def test_iou_threshold(self):
        config = TrackerConfig(filter_mode=FILTER_IOU, filter_iou_threshold=0.9)
        dets = [BoundingBox(0.33, 0.3, 0.1, 0.1)]
        self.assertEqual(filter_initializations(self.candidates[:1], dets, config), [])

    def test_empty_detections(self):
        config = TrackerConfig(filter_mode=FILTER_IOU)
        self.assertEqual(filter_initializations(self.candidates, [], config), [])

    def test_center_distance(self):
        config = TrackerConfig(filter_mode=FILTER_CENTER_DISTANCE)
        # center inside both A and its neighbour, nearer to the neighbour
        dets = [BoundingBox(0.325, 0.3, 0.3, 0.3)]
        self.assertEqual(filter_initializations(self.candidates, dets, config), [1])
        outside = [BoundingBox(0.5, 0.8, 0.05, 0.05)]
        self.assertEqual(filter_initializations(self.candidates, outside, config), [])


TINY = ModelConfig(
    d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=1, n_object_queries=6, patch_size=8,
    ffn_dim=32)


class TrackWithModelTestCase(unittest.TestCase):

    def setUp(self):
        self.sequence = sequences.simulate('SYNTH', SynthConfig(
            n_objects=2, seq_len=5, image_width=32, image_height=32, min_size=6, max_size=10))
        self.config = TrackerConfig(sigma_object=0.0, sigma_track=0.0)

    def run_tracker(self, config):
        tracker = Tracker(TrackingTransformer(TINY), config)
        return track_sequence(tracker, self.sequence)

    def test_emitted_frames_are_consistent(self):
        frames = self.run_tracker(self.config)
        self.assertEqual(len(frames), 5)
        self.assertTrue(frames[0])
        for emitted in frames:
            ids = identities(emitted)
            self.assertEqual(len(ids), len(set(ids)))
            boxes = np.array([obj.box.as_array() for obj in emitted])
            overlaps = iou_matrix(boxes, boxes)
            np.fill_diagonal(overlaps, 0)
            self.assertTrue((overlaps <= self.config.sigma_nms).all())

    def test_deterministic(self):
        self.assertEqual(self.run_tracker(self.config), self.run_tracker(self.config))

    def test_public_detections_without_boxes(self):
        config = replace(self.config, filter_mode=FILTER_IOU)
        self.sequence.detections = SequenceGT([[] for _ in range(5)], (32, 32))
        tracker = Tracker(TrackingTransformer(TINY), config)
        frames = track_sequence(tracker, self.sequence, use_public_dets=True)
        self.assertEqual(frames, [[]] * 5)


class GreedyCenterTrackerTestCase(unittest.TestCase):

    def test_links_by_center(self):
        shifted_a = (0.32, 0.31, 0.1, 0.1)
        shifted_c = (0.69, 0.32, 0.1, 0.1)
        script = [
            {'objects': [(0.9, A), (0.9, C)]},
            {'objects': [(0.9, shifted_c), (0.9, shifted_a)]},
            {},
            {'objects': [(0.9, A), (0.9, (0.5, 0.8, 0.1, 0.1))]},
        ]
        tracker = GreedyCenterTracker(ScriptedModel(script), TrackerConfig())
        self.assertEqual(identities(tracker.step(FRAME)), [1, 2])
        emitted = tracker.step(FRAME)
        self.assertEqual({obj.identity: obj.box for obj in emitted},
                         {1: BoundingBox(*shifted_a), 2: BoundingBox(*shifted_c)})
        self.assertEqual(tracker.step(FRAME), [])
        self.assertEqual(identities(tracker.step(FRAME)), [1, 3])

    def test_forgets_after_patience(self):
        script = [{'objects': [(0.9, A)]}, {}, {}, {'objects': [(0.9, A)]}]
        tracker = GreedyCenterTracker(ScriptedModel(script), TrackerConfig(t_track_reid=1))
        for _ in range(3):
            tracker.step(FRAME)
        self.assertEqual(identities(tracker.step(FRAME)), [2])


class TrackCommandTestCase(SimpleTestCase):

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        self.checkpoint = os.path.join(self.tmpdir, 'model.ckpt')
        save_checkpoint(self.checkpoint, TrackingTransformer(ModelConfig(**settings.NETWORK)))
        self.sequence = sequences.simulate('SYNTH', SynthConfig(**settings.SYNTH))
        self.data = os.path.join(self.tmpdir, 'data')
        storage.save_sequence(self.sequence, os.path.join(self.data, 'SYNTH'))

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def track(self, output, *args):
        out = io.StringIO()
        call_command('track', self.checkpoint, self.data, '--output', output, *args, stdout=out)
        return out.getvalue()

    def test_same_inputs_same_results(self):
        first, second = os.path.join(self.tmpdir, 'a'), os.path.join(self.tmpdir, 'b')
        output = self.track(first, '--set', 'sigma_object=0.0', '--seed', '2')
        self.track(second, '--set', 'sigma_object=0.0', '--seed', '2')
        self.assertTrue(output.startswith("# deskformer track seed=2\n"))
        results = os.path.join(first, 'SYNTH.txt')
        self.assertTrue(filecmp.cmp(results, os.path.join(second, 'SYNTH.txt'), shallow=False))
        with open(results) as fh:
            self.assertTrue(fh.read())

    def test_filter_with_empty_detections(self):
        empty = SequenceGT([[] for _ in range(len(self.sequence))], self.sequence.image_size)
        storage.save_sequence(
            replace(self.sequence, detections=empty), os.path.join(self.data, 'SYNTH'))
        output = os.path.join(self.tmpdir, 'out')
        self.track(output, '--filter', 'iou', '--set', 'sigma_object=0.0')
        with open(os.path.join(output, 'SYNTH.txt')) as fh:
            self.assertEqual(fh.read(), '')

    def test_without_track_queries(self):
        output = os.path.join(self.tmpdir, 'out')
        self.track(output, '--no-track-queries', '--set', 'sigma_object=0.0')
        self.assertTrue(os.path.exists(os.path.join(output, 'SYNTH.txt')))

    def test_mismatched_checkpoint(self):
        with self.assertRaises(CommandError) as cm:
            self.track(os.path.join(self.tmpdir, 'out'), '--set', 'd_model=32')
        self.assertTrue(str(cm.exception).startswith("CheckpointError: "))

    def test_public_detections_required(self):
        storage.save_sequence(
            replace(self.sequence, detections=None), os.path.join(self.tmpdir, 'bare', 'S'))
        with self.assertRaises(CommandError) as cm:
            call_command(
                'track', self.checkpoint, os.path.join(self.tmpdir, 'bare'), '--output',
                os.path.join(self.tmpdir, 'out'), '--public-dets', stdout=io.StringIO())
        self.assertTrue(str(cm.exception).startswith("SequenceLayoutError: "))
