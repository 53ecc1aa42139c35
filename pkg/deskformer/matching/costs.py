"""Pairwise matching costs between ground truth and predictions."""

from dataclasses import dataclass

import numpy as np

from deskformer.errors import ConfigurationError
from matching.boxes import giou, giou_matrix


@dataclass(frozen=True)
class CostWeights:
    lambda_cls: float = 2.0
    lambda_l1: float = 5.0
    lambda_iou: float = 2.0

    def __post_init__(self):
        weights = (self.lambda_cls, self.lambda_l1, self.lambda_iou)
        if min(weights) < 0:
            raise ConfigurationError("Cost weights must be non-negative, got {}".format(weights))
        if max(weights) <= 0:
            raise ConfigurationError("At least one cost weight must be positive")


def box_cost(gt, pred, weights):
    """λ_ℓ1 · ‖gt − pred‖₁ over the center-format coordinates plus λ_iou · (1 − gIoU)."""
    l1 = float(np.abs(gt.as_array() - pred.as_array()).sum())
    return weights.lambda_l1 * l1 + weights.lambda_iou * (1.0 - giou(gt, pred))


def match_cost(gt, class_probs, pred_box, weights):
    """Cost of explaining `gt` with one prediction row.

    The class enters as a plain probability of the gt class (not its logarithm); the
    background probability plays no part.
    """
    return -weights.lambda_cls * float(class_probs[gt.label]) + box_cost(gt.box, pred_box, weights)


def match_cost_matrix(gts, class_probs, boxes, weights):
    """Vectorized `match_cost` for every (gt, prediction row) pair.

    `class_probs` is (N, n_classes + 1) and `boxes` (N, 4) in center format.
    """
    class_probs = np.asarray(class_probs, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if not gts or not len(boxes):
        return np.zeros((len(gts), len(boxes)))

    gt_boxes = np.array([gt.box.as_array() for gt in gts])
    labels = [gt.label for gt in gts]
    l1 = np.abs(gt_boxes[:, None, :] - boxes[None, :, :]).sum(axis=2)
    iou_cost = 1.0 - giou_matrix(gt_boxes, boxes)
    cls_cost = -class_probs[:, labels].T
    return (
        weights.lambda_cls * cls_cost + weights.lambda_l1 * l1 + weights.lambda_iou * iou_cost)
