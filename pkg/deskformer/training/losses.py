"""Per-query and set-prediction losses.

Matched rows pay -λ_cls·log p̂(c_gt) plus the box terms λ_ℓ1·‖b - b̂‖₁ + λ_iou·(1 - gIoU);
background rows pay -λ_cls·w_bg·log p̂(background). `set_loss` sums over every row; training
normalizes that sum per decoder output with `LossBreakdown.normalized`: the class term becomes
a weighted mean over the rows and the box terms a mean over the matched objects.
"""

from dataclasses import dataclass

import numpy as np

from deskformer.errors import ConfigurationError
from numerics import tensor as tn
from numerics.tensor import Tensor

# probabilities are clamped here before taking the logarithm
PROBABILITY_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    background_weight: float = 1.0
    supervise_prev_frame: bool = True
    normalize_per_object: bool = True

    def __post_init__(self):
        if self.background_weight < 0:
            raise ConfigurationError("background_weight can not be negative")


@dataclass
class LossBreakdown:
    total: Tensor
    cls_component: Tensor
    l1_component: Tensor
    giou_component: Tensor
    n_matched: int = 0
    n_background: int = 0

    @classmethod
    def zero(cls):
        return cls(Tensor(0.0), Tensor(0.0), Tensor(0.0), Tensor(0.0))

    def __add__(self, other):
        return LossBreakdown(
            total=self.total + other.total,
            cls_component=self.cls_component + other.cls_component,
            l1_component=self.l1_component + other.l1_component,
            giou_component=self.giou_component + other.giou_component,
            n_matched=self.n_matched + other.n_matched,
            n_background=self.n_background + other.n_background)

    def normalized(self, background_weight=1.0):
        """Class term divided by the summed row weights, box terms by the matched count.

        A loss without rows or without matched objects keeps the corresponding terms as they
        are.
        """
        row_weight = self.n_matched + background_weight * self.n_background
        cls_scale = 1.0 / row_weight if row_weight > 0 else 1.0
        box_scale = 1.0 / max(self.n_matched, 1)
        cls_term = self.cls_component * cls_scale
        l1_term = self.l1_component * box_scale
        giou_term = self.giou_component * box_scale
        return LossBreakdown(
            total=cls_term + l1_term + giou_term, cls_component=cls_term, l1_component=l1_term,
            giou_component=giou_term, n_matched=self.n_matched, n_background=self.n_background)

    def values(self):
        """Plain floats in log order: total, cls, l1, giou."""
        return tuple(t.item() for t in (
            self.total, self.cls_component, self.l1_component, self.giou_component))


def _corners(boxes):
    cx, cy, w, h = (boxes[:, i] for i in range(4))
    return cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5


def generalized_iou(pred, target):
    """Row-wise gIoU between (n, 4) center-format boxes, differentiable in both arguments."""
    pred, target = tn.as_tensor(pred), tn.as_tensor(target)
    px1, py1, px2, py2 = _corners(pred)
    tx1, ty1, tx2, ty2 = _corners(target)

    inter_w = tn.clamp_min(tn.minimum(px2, tx2) - tn.maximum(px1, tx1), 0.0)
    inter_h = tn.clamp_min(tn.minimum(py2, ty2) - tn.maximum(py1, ty1), 0.0)
    inter = inter_w * inter_h
    union = pred[:, 2] * pred[:, 3] + target[:, 2] * target[:, 3] - inter
    hull = ((tn.maximum(px2, tx2) - tn.minimum(px1, tx1))
            * (tn.maximum(py2, ty2) - tn.minimum(py1, ty1)))
    return inter / union - (hull - union) / hull


def _log_probability(class_probs, rows, columns):
    return tn.log(tn.clamp_min(class_probs[(rows, columns)], PROBABILITY_FLOOR))


def _breakdown(class_probs, boxes, matched, background, weights, background_weight):
    """Loss of `matched` (row, gt) pairs plus `background` rows over one prediction."""
    background_class = class_probs.shape[1] - 1
    cls_term = Tensor(0.0)
    l1_term = Tensor(0.0)
    giou_term = Tensor(0.0)

    if matched:
        rows = np.array([row for row, _ in matched])
        labels = np.array([gt.label for _, gt in matched])
        targets = np.array([gt.box.as_array() for _, gt in matched])
        cls_term = -weights.lambda_cls * _log_probability(class_probs, rows, labels).sum()
        predicted = boxes[rows]
        l1_term = weights.lambda_l1 * tn.absolute(predicted - targets).sum()
        giou_term = weights.lambda_iou * (1.0 - generalized_iou(predicted, targets)).sum()

    if background:
        rows = np.array(sorted(background))
        columns = np.full(len(rows), background_class)
        cls_term = cls_term - (weights.lambda_cls * background_weight) * _log_probability(
            class_probs, rows, columns).sum()

    return LossBreakdown(
        total=cls_term + l1_term + giou_term, cls_component=cls_term, l1_component=l1_term,
        giou_component=giou_term, n_matched=len(matched), n_background=len(background))


def query_loss(class_probs, box, gt, weights, background_weight=1.0):
    """Loss of a single prediction row; `gt` is the matched object or None for background."""
    class_probs = tn.reshape(class_probs, (1, -1))
    box = tn.reshape(box, (1, 4))
    if gt is None:
        breakdown = _breakdown(class_probs, box, [], {0}, weights, background_weight)
    else:
        breakdown = _breakdown(class_probs, box, [(0, gt)], set(), weights, background_weight)
    return breakdown.total


def set_loss(prediction, gts, assignment, weights, background_weight=1.0):
    """Sum of `query_loss` over every row of `prediction`."""
    matched = [(pair.prediction_index, gts[pair.gt_index]) for pair in assignment.pairs]
    return _breakdown(
        prediction.class_probs, prediction.boxes, matched, assignment.background_predictions,
        weights, background_weight)
