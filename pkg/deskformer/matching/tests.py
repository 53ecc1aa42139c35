import itertools
import unittest

import factory.random
import numpy as np

from deskformer.errors import ConfigurationError
from matching import boxes, costs
from matching.boxes import BoundingBox, LabeledObject
from matching.factories import BoundingBoxFactory, LabeledObjectFactory
from matching.hungarian import AssignmentError, assignment_cost, hungarian, linear_assignment
from matching.logic import Assignment, DuplicateIdentityError, constrained_assignment

DEFAULT_WEIGHTS = costs.CostWeights(lambda_cls=2, lambda_l1=5, lambda_iou=2)


def brute_force_minimum(cost):
    """Minimum total over every injective row -> column mapping."""
    n_rows, n_cols = cost.shape
    perms = np.array(list(itertools.permutations(range(n_cols), n_rows)))
    return cost[np.arange(n_rows), perms].sum(axis=1).min()


class BoundingBoxTestCase(unittest.TestCase):

    def test_degenerate(self):
        self.assertRaises(boxes.DegenerateBoxError, BoundingBox, 0.5, 0.5, 0.0, 0.1)
        self.assertRaises(boxes.DegenerateBoxError, BoundingBox, 0.5, 0.5, 0.1, -0.1)
        self.assertRaises(boxes.DegenerateBoxError, BoundingBox, float('nan'), 0.5, 0.1, 0.1)

    def test_corners(self):
        box = BoundingBox.from_corners(0.25, 0.25, 0.75, 0.75)
        self.assertEqual(box, BoundingBox(0.5, 0.5, 0.5, 0.5))
        self.assertEqual(box.corners, (0.25, 0.25, 0.75, 0.75))

    def test_conversion_pair(self):
        factory.random.reseed_random(3)
        array = np.array([BoundingBoxFactory().as_array() for _ in range(10)])
        back = boxes.corners_to_center(boxes.center_to_corners(array))
        np.testing.assert_allclose(back, array, atol=1e-15)

    def test_contains_point(self):
        box = BoundingBox(0.5, 0.5, 0.2, 0.2)
        self.assertTrue(box.contains_point(0.45, 0.55))
        self.assertFalse(box.contains_point(0.65, 0.5))


class GeneralizedIoUTestCase(unittest.TestCase):

    def test_identical(self):
        box = BoundingBox(0.3, 0.4, 0.2, 0.1)
        self.assertEqual(boxes.giou(box, box), 1.0)

    def test_corner_touching(self):
        a = BoundingBox.from_corners(0, 0, 0.5, 0.5)
        b = BoundingBox.from_corners(0.5, 0.5, 1, 1)
        self.assertAlmostEqual(boxes.giou(a, b), -0.5, places=12)

    def test_partial_overlap(self):
        a = BoundingBox.from_corners(0, 0, 0.5, 0.5)
        b = BoundingBox.from_corners(0.25, 0.25, 0.75, 0.75)
        expected = 1 / 7 - (0.5625 - 0.4375) / 0.5625
        self.assertAlmostEqual(boxes.giou(a, b), expected, places=12)
        self.assertAlmostEqual(boxes.giou(a, b), -0.0794, places=4)

    def test_properties(self):
        factory.random.reseed_random(4)
        for _ in range(200):
            a, b = BoundingBoxFactory(), BoundingBoxFactory()
            self.assertEqual(boxes.giou(a, b), boxes.giou(b, a))
            self.assertLessEqual(boxes.giou(a, b), boxes.iou(a, b))
            self.assertGreater(boxes.giou(a, b), -1)

    def test_equal_to_iou_when_hull_is_union(self):
        outer = BoundingBox(0.5, 0.5, 0.4, 0.4)
        inner = BoundingBox(0.5, 0.5, 0.2, 0.2)
        self.assertAlmostEqual(boxes.giou(outer, inner), boxes.iou(outer, inner), places=15)
        self.assertAlmostEqual(boxes.iou(outer, inner), 0.25, places=15)

    def test_empty_matrices(self):
        self.assertEqual(boxes.iou_matrix(np.zeros((0, 4)), [[0.5, 0.5, 0.1, 0.1]]).shape, (0, 1))


class CostTestCase(unittest.TestCase):

    def test_weights_validation(self):
        self.assertRaises(ConfigurationError, costs.CostWeights, -1, 5, 2)
        self.assertRaises(ConfigurationError, costs.CostWeights, 0, 0, 0)

    def test_box_cost_identical(self):
        box = BoundingBox(0.3, 0.3, 0.2, 0.2)
        self.assertEqual(costs.box_cost(box, box, DEFAULT_WEIGHTS), 0.0)

    def test_box_cost_shift(self):
        gt = BoundingBox(0.5, 0.5, 0.2, 0.2)
        pred = BoundingBox(0.6, 0.5, 0.2, 0.2)
        # intersection 0.02, union 0.06, hull 0.06
        expected_giou = 1 / 3
        self.assertAlmostEqual(boxes.giou(gt, pred), expected_giou, places=12)
        self.assertAlmostEqual(
            costs.box_cost(gt, pred, DEFAULT_WEIGHTS), 5 * 0.1 + 2 * (1 - expected_giou),
            places=12)

    def test_box_cost_without_box_weights(self):
        weights = costs.CostWeights(lambda_cls=2, lambda_l1=0, lambda_iou=0)
        factory.random.reseed_random(5)
        for _ in range(10):
            cost = costs.box_cost(BoundingBoxFactory(), BoundingBoxFactory(), weights)
            self.assertEqual(cost, 0)

    def test_match_cost_plugged(self):
        # λ_ℓ1=3 and a 0.1 shift give a box cost of 0.3
        weights = costs.CostWeights(lambda_cls=2, lambda_l1=3, lambda_iou=0)
        gt = LabeledObject(1, BoundingBox(0.5, 0.5, 0.2, 0.2))
        pred = BoundingBox(0.6, 0.5, 0.2, 0.2)
        cost = costs.match_cost(gt, np.array([0.8, 0.2]), pred, weights)
        self.assertAlmostEqual(cost, -1.3, places=12)

    def test_match_cost_zero(self):
        gt = LabeledObject(1, BoundingBox(0.5, 0.5, 0.2, 0.2))
        self.assertEqual(costs.match_cost(gt, np.array([0.0, 1.0]), gt.box, DEFAULT_WEIGHTS), 0.0)

    def test_match_cost_monotonic(self):
        gt = LabeledObject(1, BoundingBox(0.5, 0.5, 0.2, 0.2))
        pred = BoundingBox(0.55, 0.5, 0.2, 0.25)
        values = [
            costs.match_cost(gt, np.array([p, 1 - p]), pred, DEFAULT_WEIGHTS)
            for p in np.linspace(0, 1, 11)]
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))

    def test_matrix_matches_scalar(self):
        factory.random.reseed_random(6)
        rng = np.random.default_rng(6)
        gts = LabeledObjectFactory.build_batch(4)
        pred_boxes = [BoundingBoxFactory() for _ in range(5)]
        probs = rng.dirichlet(np.ones(2), size=5)
        matrix = costs.match_cost_matrix(
            gts, probs, np.array([b.as_array() for b in pred_boxes]), DEFAULT_WEIGHTS)
        for i, gt in enumerate(gts):
            for j, box in enumerate(pred_boxes):
                self.assertAlmostEqual(
                    matrix[i, j], costs.match_cost(gt, probs[j], box, DEFAULT_WEIGHTS), places=12)


class HungarianTestCase(unittest.TestCase):

    def test_single(self):
        self.assertEqual(hungarian([[0]]), [(0, 0)])

    def test_two_by_two(self):
        pairs = hungarian([[1, 2], [2, 1]])
        self.assertEqual(pairs, [(0, 0), (1, 1)])
        self.assertEqual(assignment_cost([[1, 2], [2, 1]], pairs), 2)

    def test_three_by_three(self):
        cost = [[4, 1, 3], [2, 0, 5], [3, 2, 2]]
        pairs = hungarian(cost)
        self.assertEqual(pairs, [(0, 1), (1, 0), (2, 2)])
        self.assertEqual(assignment_cost(cost, pairs), 5)

    def test_rectangular(self):
        cost = [[5, 1, 9, 4], [1, 8, 2, 7]]
        self.assertEqual(hungarian(cost), [(0, 1), (1, 0)])

    def test_empty(self):
        self.assertEqual(hungarian(np.zeros((0, 3))), [])

    def test_more_rows_than_columns(self):
        self.assertRaises(AssignmentError, hungarian, [[1], [2]])

    def test_non_finite(self):
        self.assertRaises(AssignmentError, hungarian, [[1, np.inf]])

    def test_transposed_wrapper(self):
        pairs = linear_assignment([[1], [0], [2]])
        self.assertEqual(pairs, [(1, 0)])

    def test_brute_force_integer(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            n_rows = int(rng.integers(1, 8))
            n_cols = int(rng.integers(n_rows, 8))
            cost = rng.integers(0, 20, size=(n_rows, n_cols)).astype(float)
            pairs = hungarian(cost)
            self.assertEqual(len({col for _, col in pairs}), n_rows)
            self.assertEqual(assignment_cost(cost, pairs), brute_force_minimum(cost))

    def test_brute_force_float(self):
        rng = np.random.default_rng(8)
        for _ in range(300):
            size = int(rng.integers(1, 8))
            cost = rng.normal(size=(size, size))
            self.assertAlmostEqual(
                assignment_cost(cost, hungarian(cost)), brute_force_minimum(cost), places=9)

    def test_scaling_keeps_assignment(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            cost = rng.normal(size=(4, 6))
            self.assertEqual(hungarian(cost), hungarian(cost * 3.7))


class ConstrainedAssignmentTestCase(unittest.TestCase):

    def setUp(self):
        super().setUp()
        factory.random.reseed_random(10)

    def predictions(self, n_rows, rng):
        probs = rng.dirichlet(np.ones(2), size=n_rows)
        pred_boxes = np.array([BoundingBoxFactory().as_array() for _ in range(n_rows)])
        return probs, pred_boxes

    def test_identity_partition(self):
        rng = np.random.default_rng(11)
        # rows 0 and 1 are track slots for identities 1 and 2, then 3 object slots
        probs, pred_boxes = self.predictions(5, rng)
        gts = [LabeledObjectFactory(identity=2), LabeledObjectFactory(identity=3)]
        result = constrained_assignment(gts, [1, 2], probs, pred_boxes, DEFAULT_WEIGHTS)

        (first, second) = result.pairs
        self.assertEqual((first.gt_index, first.prediction_index), (0, 1))
        self.assertEqual(first.provenance, Assignment.BY_IDENTITY)
        self.assertEqual(second.gt_index, 1)
        self.assertIn(second.prediction_index, (2, 3, 4))
        self.assertEqual(second.provenance, Assignment.BY_COST)
        self.assertIn(0, result.background_predictions)
        self.assertEqual(len(result.background_predictions), 3)

    def test_no_track_slots_is_detection(self):
        rng = np.random.default_rng(12)
        probs, pred_boxes = self.predictions(6, rng)
        gts = LabeledObjectFactory.build_batch(3)
        result = constrained_assignment(gts, [], probs, pred_boxes, DEFAULT_WEIGHTS)
        self.assertTrue(all(p.provenance == Assignment.BY_COST for p in result.pairs))

        cost = costs.match_cost_matrix(gts, probs, pred_boxes, DEFAULT_WEIGHTS)
        self.assertEqual(
            [(p.gt_index, p.prediction_index) for p in result.pairs], hungarian(cost))

    def test_no_ground_truth(self):
        rng = np.random.default_rng(13)
        probs, pred_boxes = self.predictions(5, rng)
        result = constrained_assignment([], [4, 9], probs, pred_boxes, DEFAULT_WEIGHTS)
        self.assertEqual(result.pairs, [])
        self.assertEqual(result.background_predictions, frozenset(range(5)))

    def test_spawned_slots_are_background(self):
        rng = np.random.default_rng(14)
        probs, pred_boxes = self.predictions(4, rng)
        gts = [LabeledObjectFactory(identity=1)]
        result = constrained_assignment(gts, [1, None], probs, pred_boxes, DEFAULT_WEIGHTS)
        self.assertEqual(result.prediction_for(0), 0)
        self.assertIn(1, result.background_predictions)

    def test_duplicate_identities(self):
        rng = np.random.default_rng(15)
        probs, pred_boxes = self.predictions(4, rng)
        gts = [LabeledObjectFactory(identity=1), LabeledObjectFactory(identity=1)]
        self.assertRaises(
            DuplicateIdentityError, constrained_assignment, gts, [], probs, pred_boxes,
            DEFAULT_WEIGHTS)
        self.assertRaises(
            DuplicateIdentityError, constrained_assignment, [], [3, 3], probs, pred_boxes,
            DEFAULT_WEIGHTS)

    def test_randomized_partition(self):
        rng = np.random.default_rng(16)
        for _ in range(500):
            prev_ids = set(rng.choice(10, size=int(rng.integers(0, 6)), replace=False).tolist())
            curr_ids = set(rng.choice(10, size=int(rng.integers(0, 6)), replace=False).tolist())
            track_ids = sorted(prev_ids)
            n_object = len(curr_ids) + int(rng.integers(0, 4))
            n_rows = len(track_ids) + n_object
            probs, pred_boxes = self.predictions(n_rows, rng)
            gts = [LabeledObjectFactory(identity=i) for i in sorted(curr_ids)]

            result = constrained_assignment(gts, track_ids, probs, pred_boxes, DEFAULT_WEIGHTS)

            rows = [p.prediction_index for p in result.pairs]
            self.assertEqual(len(rows), len(set(rows)))
            self.assertEqual(sorted(p.gt_index for p in result.pairs), list(range(len(gts))))
            self.assertEqual(set(rows) | result.background_predictions, set(range(n_rows)))
            self.assertFalse(set(rows) & result.background_predictions)
            for pair in result.pairs:
                identity = gts[pair.gt_index].identity
                if identity in prev_ids:
                    self.assertEqual(pair.provenance, Assignment.BY_IDENTITY)
                    self.assertEqual(track_ids[pair.prediction_index], identity)
                else:
                    self.assertEqual(pair.provenance, Assignment.BY_COST)
                    self.assertGreaterEqual(pair.prediction_index, len(track_ids))
            for row, identity in enumerate(track_ids):
                if identity not in curr_ids:
                    self.assertIn(row, result.background_predictions)
