import io
import math
import os
import shutil
import tempfile
import unittest
from dataclasses import replace
from unittest.mock import patch

import logassert
import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from deskformer.errors import ConfigurationError
from deskformer.rng import generator
from matching.boxes import BoundingBox, LabeledObject, giou_matrix
from matching.costs import CostWeights
from matching.logic import Assignment, Pair, constrained_assignment
from network.checkpoint import load_checkpoint
from network.transformer import FramePrediction, ModelConfig, TrackingTransformer
from numerics.gradcheck import finite_difference_check
from numerics.tensor import NonFiniteError, Tensor, parameter
from sequences import logic as sequences, storage
from sequences.logic import Sequence, SequenceGT, SynthConfig
from training import augment, losses
from training.logic import (
    DivergenceError, SGDMomentum, Trainer, TrainingConfig, read_training_log, supervised_loss,
    two_step_loss)

WEIGHTS = CostWeights(lambda_cls=2, lambda_l1=5, lambda_iou=2)
TINY = ModelConfig(
    d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=1, n_object_queries=4, patch_size=8,
    ffn_dim=32, activation='gelu')
QUIET = augment.AugmentConfig(p_fn=0, p_fp=0, jitter_frac=0, frame_range=1)


def prediction_from(probs, boxes):
    probs = np.asarray(probs, dtype=float)
    boxes = np.asarray(boxes, dtype=float)
    return FramePrediction(
        embeddings=Tensor(np.zeros((len(boxes), 4))), boxes=Tensor(boxes),
        class_probs=Tensor(probs))


def frame_pair(seed, size=16):
    rng = np.random.default_rng(seed)
    return (rng.integers(0, 256, size=(size, size), dtype=np.uint8),
            rng.integers(0, 256, size=(size, size), dtype=np.uint8))


def objects(*boxes, first_identity=1):
    return [LabeledObject(first_identity + i, BoundingBox(*box)) for i, box in enumerate(boxes)]


class QueryLossTestCase(unittest.TestCase):

    def test_saturated_background(self):
        loss = losses.query_loss(Tensor([0.0, 1.0]), Tensor([0.5, 0.5, 0.1, 0.1]), None, WEIGHTS)
        self.assertEqual(loss.item(), 0.0)

    def test_perfect_match(self):
        gt = LabeledObject(1, BoundingBox(0.4, 0.6, 0.2, 0.3))
        loss = losses.query_loss(Tensor([1.0, 0.0]), Tensor(gt.box.as_array()), gt, WEIGHTS)
        self.assertAlmostEqual(loss.item(), 0.0, places=12)

    def test_closed_form(self):
        gt = LabeledObject(1, BoundingBox(0.5, 0.5, 0.2, 0.2))
        weights = CostWeights(lambda_cls=2, lambda_l1=1, lambda_iou=0)
        box = Tensor([0.85, 0.85, 0.2, 0.2])
        loss = losses.query_loss(Tensor([0.5, 0.5]), box, gt, weights)
        self.assertAlmostEqual(loss.item(), 2 * math.log(2) + 0.7, places=9)

    def test_zero_probability_is_clamped(self):
        gt = LabeledObject(1, BoundingBox(0.5, 0.5, 0.2, 0.2))
        loss = losses.query_loss(Tensor([0.0, 1.0]), Tensor(gt.box.as_array()), gt, WEIGHTS)
        self.assertAlmostEqual(loss.item(), -2 * math.log(losses.PROBABILITY_FLOOR), places=6)

    def test_generalized_iou_matches_box_geometry(self):
        rng = np.random.default_rng(4)
        a = np.column_stack([rng.uniform(0.3, 0.7, (6, 2)), rng.uniform(0.05, 0.3, (6, 2))])
        b = np.column_stack([rng.uniform(0.3, 0.7, (6, 2)), rng.uniform(0.05, 0.3, (6, 2))])
        np.testing.assert_allclose(
            losses.generalized_iou(Tensor(a), Tensor(b)).data,
            np.diag(giou_matrix(a, b)), atol=1e-12)


class SetLossTestCase(unittest.TestCase):

    def setUp(self):
        self.gts = objects((0.3, 0.3, 0.2, 0.2), (0.7, 0.6, 0.1, 0.3))
        self.prediction = prediction_from(
            [[0.7, 0.3], [0.2, 0.8], [0.6, 0.4]],
            [[0.32, 0.28, 0.2, 0.25], [0.5, 0.5, 0.3, 0.3], [0.7, 0.55, 0.15, 0.3]])
        self.assignment = Assignment(
            pairs=[Pair(0, 0, Assignment.BY_COST), Pair(1, 2, Assignment.BY_COST)],
            background_predictions=frozenset({1}))

    def test_all_background_saturated(self):
        prediction = prediction_from([[0.0, 1.0]] * 3, [[0.5, 0.5, 0.1, 0.1]] * 3)
        breakdown = losses.set_loss(
            prediction, [], Assignment(background_predictions=frozenset({0, 1, 2})), WEIGHTS)
        self.assertEqual(breakdown.total.item(), 0.0)
        self.assertEqual((breakdown.n_matched, breakdown.n_background), (0, 3))

    def test_sum_of_query_losses(self):
        breakdown = losses.set_loss(self.prediction, self.gts, self.assignment, WEIGHTS)
        probs, boxes = self.prediction.class_probs.data, self.prediction.boxes.data
        expected = (
            losses.query_loss(Tensor(probs[0]), Tensor(boxes[0]), self.gts[0], WEIGHTS).item()
            + losses.query_loss(Tensor(probs[1]), Tensor(boxes[1]), None, WEIGHTS).item()
            + losses.query_loss(Tensor(probs[2]), Tensor(boxes[2]), self.gts[1], WEIGHTS).item())
        self.assertAlmostEqual(breakdown.total.item(), expected, places=12)

    def test_components_add_up(self):
        breakdown = losses.set_loss(self.prediction, self.gts, self.assignment, WEIGHTS)
        total, cls_part, l1_part, giou_part = breakdown.values()
        self.assertAlmostEqual(total, cls_part + l1_part + giou_part, delta=1e-9)
        self.assertGreater(total, 0)

    def test_permutation_invariance(self):
        order = [2, 0, 1]
        prediction = prediction_from(
            self.prediction.class_probs.data[order], self.prediction.boxes.data[order])
        new_row = {old: new for new, old in enumerate(order)}
        assignment = Assignment(
            pairs=[replace(p, prediction_index=new_row[p.prediction_index])
                   for p in self.assignment.pairs],
            background_predictions=frozenset(new_row[r] for r in {1}))
        self.assertAlmostEqual(
            losses.set_loss(prediction, self.gts, assignment, WEIGHTS).total.item(),
            losses.set_loss(self.prediction, self.gts, self.assignment, WEIGHTS).total.item(),
            places=12)

    def test_background_weight(self):
        breakdown = losses.set_loss(
            self.prediction, [], Assignment(background_predictions=frozenset({0, 1, 2})),
            WEIGHTS, background_weight=0.5)
        expected = -2 * 0.5 * math.log(0.3 * 0.8 * 0.4)
        self.assertAlmostEqual(breakdown.total.item(), expected, places=12)

    def test_auxiliary_outputs_are_supervised(self):
        aux = prediction_from(
            [[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]], [[0.5, 0.5, 0.2, 0.2]] * 3)
        prediction = replace(self.prediction, aux=[aux])
        breakdown, assignment = supervised_loss(
            prediction, self.gts, [], WEIGHTS, losses.LossConfig())
        alone, _ = supervised_loss(self.prediction, self.gts, [], WEIGHTS, losses.LossConfig())
        aux_alone, _ = supervised_loss(aux, self.gts, [], WEIGHTS, losses.LossConfig())
        self.assertAlmostEqual(
            breakdown.total.item(), alone.total.item() + aux_alone.total.item(), places=12)
        self.assertEqual(len(assignment.pairs), 2)

    def test_normalized_per_object(self):
        summed = losses.set_loss(self.prediction, self.gts, self.assignment, WEIGHTS)
        _, cls_part, l1_part, giou_part = summed.values()
        normalized = summed.normalized()
        # two matched rows and one background row
        self.assertAlmostEqual(normalized.cls_component.item(), cls_part / 3, places=12)
        self.assertAlmostEqual(normalized.l1_component.item(), l1_part / 2, places=12)
        self.assertAlmostEqual(normalized.giou_component.item(), giou_part / 2, places=12)
        self.assertAlmostEqual(
            normalized.total.item(), cls_part / 3 + (l1_part + giou_part) / 2, places=12)
        self.assertEqual((normalized.n_matched, normalized.n_background), (2, 1))

    def test_normalized_with_background_weight(self):
        summed = losses.set_loss(
            self.prediction, self.gts, self.assignment, WEIGHTS, background_weight=0.5)
        self.assertAlmostEqual(summed.normalized(0.5).cls_component.item(),
                               summed.cls_component.item() / 2.5, places=12)

    def test_normalized_without_objects(self):
        summed = losses.set_loss(
            self.prediction, [], Assignment(background_predictions=frozenset({0, 1, 2})),
            WEIGHTS)
        normalized = summed.normalized()
        self.assertAlmostEqual(normalized.total.item(), summed.total.item() / 3, places=12)
        self.assertEqual(normalized.l1_component.item(), 0.0)
        empty = losses.LossBreakdown.zero().normalized(0.0)
        self.assertEqual(empty.values(), (0.0, 0.0, 0.0, 0.0))

    def test_training_objective_is_normalized(self):
        normalized, assignment = supervised_loss(
            self.prediction, self.gts, [], WEIGHTS, losses.LossConfig())
        summed, _ = supervised_loss(
            self.prediction, self.gts, [], WEIGHTS,
            losses.LossConfig(normalize_per_object=False))
        direct = losses.set_loss(self.prediction, self.gts, assignment, WEIGHTS)
        self.assertAlmostEqual(summed.total.item(), direct.total.item(), places=12)
        self.assertAlmostEqual(
            normalized.total.item(), direct.normalized().total.item(), places=12)


class SamplePrevFrameTestCase(unittest.TestCase):

    def test_interior_is_uniform(self):
        config = replace(QUIET, frame_range=1)
        rng = generator(0)
        draws = [augment.sample_prev_frame(5, 10, config, rng) for _ in range(10000)]
        self.assertEqual(set(draws), {4, 6})
        self.assertAlmostEqual(draws.count(4) / len(draws), 0.5, delta=0.02)

    def test_window_is_clamped(self):
        config = augment.AugmentConfig(frame_range=3)
        rng = generator(1)
        draws = {augment.sample_prev_frame(0, 10, config, rng) for _ in range(500)}
        self.assertEqual(draws, {1, 2, 3})

    def test_two_frames(self):
        config = replace(QUIET, frame_range=1)
        rng = generator(2)
        self.assertEqual({augment.sample_prev_frame(1, 2, config, rng) for _ in range(50)}, {0})

    def test_past_only(self):
        config = augment.AugmentConfig(frame_range=2, past_only=True)
        rng = generator(3)
        self.assertEqual(
            {augment.sample_prev_frame(4, 10, config, rng) for _ in range(200)}, {2, 3})
        # the first frame has no past; it falls back to the following ones
        self.assertEqual(
            {augment.sample_prev_frame(0, 10, config, rng) for _ in range(200)}, {1, 2})

    def test_short_sequence(self):
        self.assertRaises(
            ConfigurationError, augment.sample_prev_frame, 0, 1, QUIET, generator(0))


def candidates(n, identities=None):
    identities = identities or list(range(1, n + 1))
    return [augment.TrackCandidate(row, identity, np.array([0.1 + 0.08 * row, 0.5, 0.1, 0.1]))
            for row, identity in zip(range(n), identities)]


class DropFalseNegativesTestCase(unittest.TestCase):

    def test_limits(self):
        tracks = candidates(5)
        self.assertEqual(augment.drop_false_negatives(tracks, QUIET, generator(0)), tracks)
        self.assertEqual(augment.drop_false_negatives(
            tracks, replace(QUIET, p_fn=1.0), generator(0)), [])

    def test_removal_rate(self):
        config = replace(QUIET, p_fn=0.4)
        rng = generator(5)
        tracks = candidates(10)
        kept = sum(len(augment.drop_false_negatives(tracks, config, rng)) for _ in range(1000))
        self.assertAlmostEqual(1 - kept / 10000, 0.4, delta=0.02)

    def test_relabeling_commutes(self):
        config = replace(QUIET, p_fn=0.5)
        tracks = candidates(8)
        renamed = candidates(8, identities=[i * 10 for i in range(1, 9)])
        kept = augment.drop_false_negatives(tracks, config, generator(6))
        kept_renamed = augment.drop_false_negatives(renamed, config, generator(6))
        self.assertEqual([c.row for c in kept], [c.row for c in kept_renamed])


class SpawnFalsePositivesTestCase(unittest.TestCase):

    def setUp(self):
        self.spawner = augment.TrackCandidate(0, 7, np.array([0.5, 0.5, 0.2, 0.2]))
        self.background = [
            augment.TrackCandidate(3, None, np.array([0.8, 0.8, 0.2, 0.2])),
            augment.TrackCandidate(4, None, np.array([0.55, 0.52, 0.2, 0.2])),
            augment.TrackCandidate(5, None, np.array([0.6, 0.4, 0.2, 0.2])),
        ]

    def test_no_spawn(self):
        result = augment.spawn_false_positives(
            [self.spawner], self.background, QUIET, generator(0))
        self.assertEqual(result, [self.spawner])

    def test_picks_most_overlapping(self):
        config = replace(QUIET, p_fp=1.0)
        result = augment.spawn_false_positives(
            [self.spawner], self.background, config, generator(0))
        self.assertEqual([c.row for c in result], [0, 4])
        self.assertIsNone(result[1].identity)

    def test_background_rows_used_once(self):
        config = replace(QUIET, p_fp=1.0)
        twin = augment.TrackCandidate(1, 8, np.array([0.5, 0.5, 0.2, 0.2]))
        result = augment.spawn_false_positives(
            [self.spawner, twin], self.background, config, generator(0))
        self.assertEqual([c.row for c in result], [0, 1, 4, 5])

    def test_without_background(self):
        config = replace(QUIET, p_fp=1.0)
        self.assertEqual(
            augment.spawn_false_positives([self.spawner], [], config, generator(0)),
            [self.spawner])

    def test_spawned_rows_are_background(self):
        gts = objects((0.5, 0.5, 0.2, 0.2), first_identity=7)
        probs = np.full((4, 2), 0.5)
        boxes = np.tile([0.5, 0.5, 0.2, 0.2], (4, 1))
        assignment = constrained_assignment(gts, [7, None], probs, boxes, WEIGHTS)
        self.assertEqual(assignment.prediction_for(0), 0)
        self.assertIn(1, assignment.background_predictions)

    def test_relabeling_commutes(self):
        config = replace(QUIET, p_fp=0.5)
        for seed in range(200):
            rng = np.random.default_rng(seed)
            n_tracks, n_background = (int(n) for n in rng.integers(1, 6, size=2))
            boxes = np.column_stack([rng.uniform(0.2, 0.8, (n_tracks + n_background, 2)),
                                     rng.uniform(0.05, 0.3, (n_tracks + n_background, 2))])
            tracks = [augment.TrackCandidate(row, row + 1, boxes[row]) for row in range(n_tracks)]
            renamed = [replace(c, identity=100 - c.identity) for c in tracks]
            background = [augment.TrackCandidate(row, None, boxes[row])
                          for row in range(n_tracks, n_tracks + n_background)]
            spawned = augment.spawn_false_positives(tracks, background, config, generator(seed))
            spawned_renamed = augment.spawn_false_positives(
                renamed, background, config, generator(seed))
            self.assertEqual([c.row for c in spawned], [c.row for c in spawned_renamed])
            self.assertEqual(
                [None if c.identity is None else 100 - c.identity for c in spawned],
                [c.identity for c in spawned_renamed])


class JitterTestCase(unittest.TestCase):

    def setUp(self):
        self.gts = objects((0.3, 0.3, 0.2, 0.2), (0.6, 0.7, 0.1, 0.1))

    def test_no_jitter(self):
        self.assertEqual(augment.jitter_gt(self.gts, 0.0, generator(0)), self.gts)

    def test_size_floor(self):
        tiny = objects((0.5, 0.5, 0.002, 0.002))
        rng = generator(1)
        for _ in range(200):
            jittered = augment.jitter_gt(tiny, 0.5, rng)[0]
            self.assertGreaterEqual(jittered.box.w, augment.MIN_BOX_SIDE)
            self.assertGreaterEqual(jittered.box.h, augment.MIN_BOX_SIDE)

    def test_mean_displacement(self):
        rng = generator(2)
        displacement = []
        for _ in range(5000):
            for before, after in zip(self.gts, augment.jitter_gt(self.gts, 0.01, rng)):
                displacement.extend(np.abs(after.box.as_array() - before.box.as_array()))
        self.assertAlmostEqual(np.mean(displacement), 0.005, delta=2e-4)

    def test_identities_kept(self):
        jittered = augment.jitter_gt(self.gts, 0.01, generator(3))
        self.assertEqual([g.identity for g in jittered], [1, 2])


class SimulatePairTestCase(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(11)
        self.image = rng.integers(0, 256, size=(32, 32), dtype=np.uint8)
        self.gts = objects(
            (0.5, 0.5, 0.25, 0.25), (0.25, 0.75, 0.125, 0.25), (0.9, 0.1, 0.125, 0.125))

    def test_without_crop(self):
        config = replace(QUIET, sim_crop_frac=0.0)
        pair = augment.simulate_pair(self.image, self.gts, config, generator(0))
        np.testing.assert_array_equal(pair.prev_frame, self.image)
        np.testing.assert_array_equal(pair.curr_frame, self.image)
        for simulated in (pair.prev_gts, pair.curr_gts):
            self.assertEqual([g.identity for g in simulated], [1, 2, 3])
            for gt, original in zip(simulated, self.gts):
                np.testing.assert_allclose(
                    gt.box.as_array(), original.box.as_array(), atol=1e-12)

    def test_boxes_follow_the_view(self):
        config = replace(QUIET, sim_crop_frac=0.2)
        for seed in range(20):
            pair = augment.simulate_pair(self.image, self.gts, config, generator(seed))
            self.assertIn(1, {g.identity for g in pair.prev_gts})
            self.assertIn(1, {g.identity for g in pair.curr_gts})
            original = {g.identity: g for g in self.gts}
            for view, simulated in ((pair.prev_view, pair.prev_gts),
                                    (pair.curr_view, pair.curr_gts)):
                for gt in simulated:
                    mapped = view.apply(original[gt.identity].box)
                    x1, y1, x2, y2 = mapped.corners
                    if min(x1, y1) >= 0 and max(x2, y2) <= 1:
                        self.assertEqual(gt.box, mapped)
                    else:
                        self.assertLess(gt.box.area, mapped.area)
                    self.assertTrue(all(-1e-12 <= c <= 1 + 1e-12 for c in gt.box.corners))

    def test_reproducible(self):
        config = replace(QUIET, sim_crop_frac=0.2)
        first = augment.simulate_pair(self.image, self.gts, config, generator(5))
        second = augment.simulate_pair(self.image, self.gts, config, generator(5))
        np.testing.assert_array_equal(first.curr_frame, second.curr_frame)
        self.assertEqual(first.curr_gts, second.curr_gts)

    def test_no_degenerate_boxes(self):
        for seed in range(500):
            rng = np.random.default_rng(seed)
            height, width = (int(side) for side in rng.integers(8, 33, size=2))
            image = rng.integers(0, 256, size=(height, width), dtype=np.uint8)
            n_objects = int(rng.integers(1, 6))
            gts = objects(*np.column_stack([rng.uniform(0.05, 0.95, (n_objects, 2)),
                                            rng.uniform(0.005, 0.5, (n_objects, 2))]))
            config = replace(QUIET, sim_crop_frac=float(rng.uniform(0, 0.9)))
            pair = augment.simulate_pair(image, gts, config, generator(seed))
            for gt in pair.prev_gts + pair.curr_gts:
                self.assertGreater(gt.box.w, 0)
                self.assertGreater(gt.box.h, 0)
                self.assertTrue(all(0 <= c <= 1 for c in gt.box.corners))


class TwoStepLossTestCase(unittest.TestCase):

    def setUp(self):
        self.model = TrackingTransformer(TINY)
        self.prev_frame, self.curr_frame = frame_pair(1)
        self.prev_gts = objects((0.3, 0.3, 0.25, 0.25), (0.7, 0.7, 0.25, 0.3))
        self.curr_gts = objects((0.35, 0.3, 0.25, 0.25), (0.7, 0.65, 0.25, 0.3))

    def detection_loss(self, prev_frame, curr_frame, gts):
        prediction = self.model.predict(prev_frame, curr_frame, self.model.query_set())
        breakdown, _ = supervised_loss(prediction, gts, [], WEIGHTS, losses.LossConfig())
        return breakdown.total.item()

    def test_all_tracks_dropped_is_detection(self):
        config = replace(QUIET, p_fn=1.0)
        breakdown = two_step_loss(
            self.model, self.prev_frame, self.curr_frame, self.prev_gts, self.curr_gts,
            config, generator(0), WEIGHTS)
        expected = (
            self.detection_loss(self.prev_frame, self.prev_frame, self.prev_gts)
            + self.detection_loss(self.prev_frame, self.curr_frame, self.curr_gts))
        self.assertAlmostEqual(breakdown.total.item(), expected, places=9)

    def test_empty_previous_frame(self):
        loss_config = losses.LossConfig(supervise_prev_frame=False)
        breakdown = two_step_loss(
            self.model, self.prev_frame, self.curr_frame, [], self.curr_gts, QUIET,
            generator(0), WEIGHTS, loss_config)
        self.assertAlmostEqual(
            breakdown.total.item(),
            self.detection_loss(self.prev_frame, self.curr_frame, self.curr_gts), places=9)

    def test_tracked_identities_are_matched_by_identity(self):
        breakdown = two_step_loss(
            self.model, self.prev_frame, self.curr_frame, self.prev_gts, self.curr_gts,
            QUIET, generator(0), WEIGHTS)
        # both frames: 2 matched objects each, everything else background
        n_rows = 2 * TINY.n_object_queries + 2
        self.assertEqual(breakdown.n_matched, 4)
        self.assertEqual(breakdown.n_matched + breakdown.n_background, n_rows)

    def test_gradient(self):
        def loss(_):
            return two_step_loss(
                self.model, self.prev_frame, self.curr_frame, self.prev_gts, self.curr_gts,
                QUIET, generator(0), WEIGHTS).total

        rng = np.random.default_rng(8)
        checked = 0
        for name, weight in self.model.named_parameters():
            size = weight.data.size
            indices = rng.choice(size, size=min(size, 2), replace=False)
            # zero object rows entering the first decoder norm have steep gradients
            error = finite_difference_check(loss, weight, h=1e-7, indices=indices)
            self.assertLess(error, 1e-4, name)
            checked += len(indices)
        self.assertGreaterEqual(checked, 50)


class SGDMomentumTestCase(unittest.TestCase):

    def setUp(self):
        self.weight = parameter(np.array([1.0, 2.0]))

    def test_momentum(self):
        config = TrainingConfig(lr=0.1, momentum=0.9, clip_max_norm=0)
        optimizer = SGDMomentum([('w', self.weight)], config)
        self.weight.grad = np.array([1.0, -1.0])
        optimizer.step(0)
        np.testing.assert_allclose(self.weight.data, [0.9, 2.1])
        optimizer.step(1)
        np.testing.assert_allclose(self.weight.data, [0.9 - 0.19, 2.1 + 0.19])

    def test_clipping(self):
        config = TrainingConfig(lr=1.0, momentum=0.0, clip_max_norm=1.0)
        optimizer = SGDMomentum([('w', self.weight)], config)
        self.weight.grad = np.array([6.0, 8.0])
        norm = optimizer.step(0)
        self.assertEqual(norm, 10.0)
        np.testing.assert_allclose(self.weight.data, [1.0 - 0.6, 2.0 - 0.8], atol=1e-6)

    def test_learning_rate_drop(self):
        config = TrainingConfig(lr=0.1, lr_drop=10, lr_gamma=0.1)
        optimizer = SGDMomentum([('w', self.weight)], config)
        self.assertEqual(optimizer.learning_rate(9), 0.1)
        self.assertAlmostEqual(optimizer.learning_rate(10), 0.01)
        self.assertAlmostEqual(optimizer.learning_rate(25), 0.001)

    def test_buffers_are_restored(self):
        config = TrainingConfig(lr=0.1, momentum=0.5, clip_max_norm=0)
        optimizer = SGDMomentum([('w', self.weight)], config, {'w': np.array([2.0, 0.0])})
        self.weight.grad = np.zeros(2)
        optimizer.step(0)
        np.testing.assert_allclose(self.weight.data, [0.9, 2.0])

    def test_zero_grad(self):
        other = parameter(np.zeros(3))
        optimizer = SGDMomentum([('w', self.weight), ('v', other)], TrainingConfig())
        self.weight.grad, other.grad = np.ones(2), np.ones(3)
        optimizer.zero_grad()
        self.assertIsNone(self.weight.grad)
        self.assertIsNone(other.grad)

    def test_missing_gradient_counts_as_zero(self):
        optimizer = SGDMomentum([('w', self.weight)], TrainingConfig())
        self.assertEqual(optimizer.step(0), 0.0)
        np.testing.assert_array_equal(self.weight.data, [1.0, 2.0])

    def test_invalid_config(self):
        self.assertRaises(ConfigurationError, TrainingConfig, momentum=1.0)
        self.assertRaises(ConfigurationError, TrainingConfig, lr=-1)
        self.assertRaises(ConfigurationError, TrainingConfig, log_every=0)


def still_sequence(n_frames=2):
    frame = frame_pair(3)[0]
    gts = objects((0.3, 0.3, 0.25, 0.25), (0.7, 0.6, 0.25, 0.3))
    return Sequence(
        name='still', frames=[frame] * n_frames,
        gt=SequenceGT([list(gts) for _ in range(n_frames)], (16, 16)))


class TrainerTestCase(unittest.TestCase):

    def setUp(self):
        logassert.setup(self, 'training.logic')

    def test_zero_learning_rate_keeps_the_loss(self):
        config = TrainingConfig(steps=3, lr=0.0, log_every=1)
        trainer = Trainer(TrackingTransformer(TINY), [still_sequence()], QUIET, config)
        log = io.StringIO()
        self.assertEqual(trainer.run(log), 3)
        rows = read_training_log(io.StringIO(log.getvalue()))
        self.assertEqual([row[0] for row in rows], [0, 1, 2])
        self.assertEqual(rows[0][1:], rows[1][1:])
        self.assertEqual(rows[0][1:], rows[2][1:])

    def test_training_lowers_the_loss(self):
        config = TrainingConfig(steps=20, lr=0.05, momentum=0.0, clip_max_norm=1.0, log_every=10)
        trainer = Trainer(TrackingTransformer(TINY), [still_sequence()], QUIET, config)
        log = io.StringIO()
        trainer.run(log)
        rows = read_training_log(io.StringIO(log.getvalue()))
        self.assertLess(rows[-1][1], rows[0][1])

    def test_resume_continues_the_step_count(self):
        config = TrainingConfig(steps=3, log_every=1)
        trainer = Trainer(
            TrackingTransformer(TINY), [still_sequence()], QUIET, config, start_step=2)
        log = io.StringIO()
        self.assertEqual(trainer.run(log), 3)
        self.assertEqual([row[0] for row in read_training_log(io.StringIO(log.getvalue()))], [2])

    def test_same_seed_same_log(self):
        config = TrainingConfig(steps=2, log_every=1)
        augment_config = augment.AugmentConfig(seed=4)
        logs = []
        for _ in range(2):
            trainer = Trainer(TrackingTransformer(TINY), [still_sequence(3)], augment_config,
                              config)
            log = io.StringIO()
            trainer.run(log)
            logs.append(log.getvalue())
        self.assertEqual(logs[0], logs[1])

    def test_checkpoint_callback(self):
        config = TrainingConfig(steps=4, log_every=1, checkpoint_every=2)
        trainer = Trainer(TrackingTransformer(TINY), [still_sequence()], QUIET, config)
        seen = []
        trainer.run(io.StringIO(), on_checkpoint=lambda current: seen.append(current.step_count))
        self.assertEqual(seen, [2, 4])

    def test_divergence(self):
        config = TrainingConfig(steps=2)
        trainer = Trainer(TrackingTransformer(TINY), [still_sequence()], QUIET, config)
        with patch('training.logic.two_step_loss', side_effect=NonFiniteError("exp overflow")):
            self.assertRaises(DivergenceError, trainer.train_step)
        self.assertLoggedError("Non-finite value at step 0", "exp overflow")

    def test_needs_frame_pairs(self):
        config = TrainingConfig(steps=1)
        model = TrackingTransformer(TINY)
        self.assertRaises(ConfigurationError, Trainer, model, [], QUIET, config)
        self.assertRaises(
            ConfigurationError, Trainer, model, [still_sequence(1)], QUIET, config)

    def test_more_objects_than_object_queries(self):
        frame = frame_pair(3)[0]
        crowded = objects(*[(0.1 + 0.16 * i, 0.5, 0.1, 0.1) for i in range(5)])
        sequence = Sequence(name='crowded', frames=[frame, frame],
                            gt=SequenceGT([crowded, crowded[:2]], (16, 16)))
        with self.assertRaises(ConfigurationError) as cm:
            Trainer(TrackingTransformer(TINY), [sequence], QUIET, TrainingConfig(steps=1))
        self.assertIn("5 ground-truth objects", str(cm.exception))
        self.assertIn("only 4 object queries", str(cm.exception))
        # a model with enough slots takes the same sequence
        roomy = replace(TINY, n_object_queries=5)
        Trainer(TrackingTransformer(roomy), [sequence], QUIET, TrainingConfig(steps=1))


class TrainingLogTestCase(unittest.TestCase):

    def test_comments_and_header_are_skipped(self):
        text = (
            "# deskformer train seed=3\n"
            "step,total,cls,l1,giou\n"
            "0,4.500000,2.000000,1.500000,1.000000\n"
            "# resumed at step 1 seed=3\n"
            "1,4.000000,2.000000,1.000000,1.000000\n")
        self.assertEqual(read_training_log(io.StringIO(text)), [
            (0, 4.5, 2.0, 1.5, 1.0), (1, 4.0, 2.0, 1.0, 1.0)])


class TrainCommandTestCase(SimpleTestCase):

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        self.data = os.path.join(self.tmpdir, 'data')
        self.output = os.path.join(self.tmpdir, 'run')
        sequence = sequences.simulate('SYNTH', SynthConfig(**settings.SYNTH))
        storage.save_sequence(sequence, os.path.join(self.data, 'SYNTH'))

    def tearDown(self):
        shutil.rmtree(self.tmpdir)

    def train(self, *args):
        out = io.StringIO()
        call_command('train', self.data, '--output', self.output, *args, stdout=out)
        return out.getvalue()

    def test_writes_checkpoint_and_log(self):
        output = self.train('--seed', '7')
        self.assertTrue(output.startswith("# deskformer train seed=7\n"))
        self.assertEqual(load_checkpoint(os.path.join(self.output, 'model.ckpt')).step, 3)
        log_path = os.path.join(self.output, 'loss.log')
        with open(log_path) as fh:
            self.assertEqual(fh.read().splitlines()[:2],
                             ["# deskformer train seed=7", "step,total,cls,l1,giou"])
        self.assertEqual([row[0] for row in read_training_log(log_path)], [0, 1, 2])

    def test_resume(self):
        self.train('--steps', '2')
        checkpoint = os.path.join(self.output, 'model.ckpt')
        self.train('--steps', '4', '--resume', checkpoint)
        self.assertEqual(load_checkpoint(checkpoint).step, 4)
        log_path = os.path.join(self.output, 'loss.log')
        self.assertEqual([row[0] for row in read_training_log(log_path)], [0, 1, 2, 3])
        with open(log_path) as fh:
            self.assertIn("# resumed at step 2 seed={}".format(settings.SEED), fh.read())

    def test_resume_with_another_network(self):
        self.train('--steps', '1')
        with self.assertRaises(CommandError) as cm:
            self.train('--resume', os.path.join(self.output, 'model.ckpt'), '--set', 'd_model=32')
        self.assertTrue(str(cm.exception).startswith("CheckpointError: "))

    def test_without_sequences(self):
        empty = os.path.join(self.tmpdir, 'empty')
        os.makedirs(empty)
        with self.assertRaises(CommandError) as cm:
            call_command('train', empty, '--output', self.output, stdout=io.StringIO())
        self.assertTrue(str(cm.exception).startswith("SequenceLayoutError: "))

    def test_object_queries_below_the_object_count(self):
        with self.assertRaises(CommandError) as cm:
            self.train('--set', 'n_object_queries=1')
        self.assertTrue(str(cm.exception).startswith("ConfigurationError: "))
        self.assertFalse(os.path.exists(os.path.join(self.output, 'model.ckpt')))
