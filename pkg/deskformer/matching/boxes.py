"""Normalized boxes and their overlap measures.

Boxes are stored in center format (cx, cy, w, h); the geometric operations convert to corner
format (x1, y1, x2, y2) internally.
"""

import math
from dataclasses import dataclass

import numpy as np


class DegenerateBoxError(ValueError):
    """A box with non-positive area or non-finite coordinates."""


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        coords = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(c) for c in coords):
            raise DegenerateBoxError("Non-finite box coordinates: {}".format(coords))
        if self.w <= 0 or self.h <= 0:
            raise DegenerateBoxError("Box without area: {}".format(coords))

    @classmethod
    def from_corners(cls, x1, y1, x2, y2):
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    @classmethod
    def from_array(cls, values):
        cx, cy, w, h = (float(v) for v in values)
        return cls(cx, cy, w, h)

    @property
    def corners(self):
        return (
            self.cx - self.w / 2, self.cy - self.h / 2,
            self.cx + self.w / 2, self.cy + self.h / 2)

    @property
    def area(self):
        return self.w * self.h

    def as_array(self):
        return np.array([self.cx, self.cy, self.w, self.h])

    def contains_point(self, x, y):
        x1, y1, x2, y2 = self.corners
        return x1 <= x <= x2 and y1 <= y <= y2


@dataclass(frozen=True)
class LabeledObject:
    """A ground-truth (or hypothesis) object: identity, box and class.

    `confidence` is the detection score of hypotheses and the "consider" flag of ground truth.
    """
    identity: int
    box: BoundingBox
    label: int = 0
    visibility: float = 1.0
    confidence: float = 1.0


def center_to_corners(boxes):
    """Convert an (N, 4) array from (cx, cy, w, h) to (x1, y1, x2, y2)."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    half = boxes[:, 2:] / 2
    return np.concatenate([boxes[:, :2] - half, boxes[:, :2] + half], axis=1)


def corners_to_center(boxes):
    """Convert an (N, 4) array from (x1, y1, x2, y2) to (cx, cy, w, h)."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return np.concatenate(
        [(boxes[:, :2] + boxes[:, 2:]) / 2, boxes[:, 2:] - boxes[:, :2]], axis=1)


def _overlaps(a, b):
    """Pairwise intersection, union and hull areas of two center-format arrays."""
    ca, cb = center_to_corners(a), center_to_corners(b)
    if ((ca[:, 2:] - ca[:, :2]) <= 0).any() or ((cb[:, 2:] - cb[:, :2]) <= 0).any():
        raise DegenerateBoxError("Overlap of a box without area")
    top_left = np.maximum(ca[:, None, :2], cb[None, :, :2])
    bottom_right = np.minimum(ca[:, None, 2:], cb[None, :, 2:])
    inter = np.clip(bottom_right - top_left, 0, None).prod(axis=2)

    area_a = (ca[:, 2:] - ca[:, :2]).prod(axis=1)
    area_b = (cb[:, 2:] - cb[:, :2]).prod(axis=1)
    union = area_a[:, None] + area_b[None, :] - inter

    hull_tl = np.minimum(ca[:, None, :2], cb[None, :, :2])
    hull_br = np.maximum(ca[:, None, 2:], cb[None, :, 2:])
    hull = (hull_br - hull_tl).prod(axis=2)
    return inter, union, hull


def iou_matrix(a, b):
    """Pairwise IoU between (N, 4) and (M, 4) center-format arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    if not len(a) or not len(b):
        return np.zeros((len(a), len(b)))
    inter, union, _ = _overlaps(a, b)
    return inter / union


def giou_matrix(a, b):
    """Pairwise generalized IoU between (N, 4) and (M, 4) center-format arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    if not len(a) or not len(b):
        return np.zeros((len(a), len(b)))
    inter, union, hull = _overlaps(a, b)
    return inter / union - (hull - union) / hull


def iou(a, b):
    return float(iou_matrix(a.as_array(), b.as_array())[0, 0])


def giou(a, b):
    """Generalized IoU in (-1, 1]: IoU minus the share of the hull not covered by the union."""
    return float(giou_matrix(a.as_array(), b.as_array())[0, 0])
