"""Tracking without track queries: detect per frame, link by nearest center.

This is the tracker used to measure what the track queries bring; it shares the detection
thresholds, NMS and public detection filtering of the query-based tracker.
"""

import logging
from dataclasses import dataclass

import numpy as np

from matching.boxes import BoundingBox, LabeledObject
from tracker.logic import NmsCandidate, filter_initializations, nms

logger = logging.getLogger(__name__)


@dataclass
class _Link:
    identity: int
    box: BoundingBox
    score: float
    missed: int = 0


class GreedyCenterTracker:
    """Detections linked to the previous boxes greedily, nearest center first.

    Links missing for more than `t_track_reid` frames are forgotten; a pair is only linked
    when the centers are at most `max_center_distance` apart (normalized units).
    """

    def __init__(self, model, config):
        self.model = model
        self.config = config
        self.links = []
        self.next_identity = 1
        self.prev_frame = None

    def _detect(self, frame, public_dets):
        prev_frame = frame if self.prev_frame is None else self.prev_frame
        prediction = self.model.predict(prev_frame, frame, self.model.query_set())
        scores = prediction.scores()
        boxes = prediction.boxes.data
        rows = [row for row in range(len(scores))
                if scores[row] >= self.config.sigma_object and (boxes[row][2:] > 0).all()]
        candidates = [BoundingBox.from_array(boxes[row]) for row in rows]
        allowed = filter_initializations(candidates, public_dets or [], self.config)
        detections = [NmsCandidate(candidates[i], float(scores[rows[i]])) for i in allowed]
        return [detections[i] for i in nms(detections, self.config.sigma_nms)]

    def step(self, frame, public_dets=None):
        detections = self._detect(frame, public_dets)
        pairs = []
        for i, link in enumerate(self.links):
            for j, det in enumerate(detections):
                distance = float(np.hypot(link.box.cx - det.box.cx, link.box.cy - det.box.cy))
                if distance <= self.config.max_center_distance:
                    pairs.append((distance, link.identity, i, j))

        linked, used = {}, set()
        for _, _, i, j in sorted(pairs):
            if i in linked or j in used:
                continue
            linked[i] = j
            used.add(j)

        survivors = []
        for i, link in enumerate(self.links):
            if i in linked:
                det = detections[linked[i]]
                link.box, link.score, link.missed = det.box, det.score, 0
            else:
                link.missed += 1
                if link.missed > self.config.t_track_reid:
                    continue
            survivors.append(link)
        for j, det in enumerate(detections):
            if j not in used:
                survivors.append(_Link(self.next_identity, det.box, det.score))
                self.next_identity += 1

        self.links = survivors
        self.prev_frame = frame
        logger.debug("Linked %d of %d detections", len(used), len(detections))
        return [LabeledObject(link.identity, link.box, confidence=link.score)
                for link in sorted(self.links, key=lambda link: link.identity)
                if link.missed == 0]
