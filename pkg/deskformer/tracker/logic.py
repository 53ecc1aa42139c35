"""Online track lifecycle driven by the decoder scores.

Every frame the decoder sees the queries of all live tracks (active and inactive) next to the
object queries. Active tracks whose score falls below `sigma_track` turn inactive; inactive
tracks are still decoded and come back with their identity when they score at least
`sigma_track_reid`, or are deleted once inactive for more than `t_track_reid` frames. Object
query rows scoring at least `sigma_object` start new tracks. Only active tracks are emitted.
"""

import logging
from dataclasses import dataclass

import numpy as np

from deskformer.errors import ConfigurationError
from matching.boxes import BoundingBox, LabeledObject, iou_matrix
from network.transformer import QuerySet
from numerics.tensor import Tensor

logger = logging.getLogger(__name__)

ACTIVE = 'active'
INACTIVE = 'inactive'

FILTER_NONE = 'none'
FILTER_IOU = 'iou'
FILTER_CENTER_DISTANCE = 'center_distance'
FILTER_MODES = (FILTER_NONE, FILTER_IOU, FILTER_CENTER_DISTANCE)


@dataclass(frozen=True)
class TrackerConfig:
    sigma_object: float = 0.4
    sigma_track: float = 0.4
    sigma_nms: float = 0.9
    t_track_reid: int = 5
    sigma_track_reid: float = 0.4
    filter_mode: str = FILTER_NONE
    filter_iou_threshold: float = 0.5
    use_track_queries: bool = True
    max_center_distance: float = 0.1

    def __post_init__(self):
        for name in ('sigma_object', 'sigma_track', 'sigma_nms', 'sigma_track_reid',
                     'filter_iou_threshold'):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigurationError("{} must be in [0, 1]".format(name))
        if self.t_track_reid < 0:
            raise ConfigurationError("t_track_reid can not be negative")
        if self.filter_mode not in FILTER_MODES:
            raise ConfigurationError("filter_mode must be one of {}, got {!r}".format(
                FILTER_MODES, self.filter_mode))
        if self.max_center_distance <= 0:
            raise ConfigurationError("max_center_distance must be positive")


@dataclass
class TrackState:
    identity: int
    query: np.ndarray
    box: BoundingBox
    score: float
    status: str = ACTIVE
    age: int = 0

    @property
    def active(self):
        return self.status == ACTIVE

    def deactivate(self):
        self.status = INACTIVE
        self.age = 0

    def as_object(self):
        return LabeledObject(self.identity, self.box, confidence=self.score)


@dataclass(frozen=True)
class NmsCandidate:
    box: BoundingBox
    score: float
    is_track: bool = False
    identity: int = None

    def order_key(self, index):
        # higher score first; existing tracks before new ones; then lower identity
        identity = self.identity if self.identity is not None else float('inf')
        return (-self.score, 0 if self.is_track else 1, identity, index)


def nms(candidates, sigma_nms):
    """Greedy non-maximum suppression; returns the sorted indices of the kept candidates.

    A candidate is suppressed when its IoU with an already kept one exceeds `sigma_nms`.
    """
    if not candidates:
        return []
    order = sorted(range(len(candidates)), key=lambda i: candidates[i].order_key(i))
    overlaps = iou_matrix(
        np.array([c.box.as_array() for c in candidates]),
        np.array([c.box.as_array() for c in candidates]))
    kept = []
    for index in order:
        if all(overlaps[index, other] <= sigma_nms for other in kept):
            kept.append(index)
    return sorted(kept)


def _greedy_pairs(scored_pairs):
    """Take (key, candidate, detection) triples in key order, each side at most once."""
    used_candidates, used_detections, allowed = set(), set(), []
    for _, candidate, detection in sorted(scored_pairs):
        if candidate in used_candidates or detection in used_detections:
            continue
        used_candidates.add(candidate)
        used_detections.add(detection)
        allowed.append(candidate)
    return sorted(allowed)


def filter_initializations(candidates, public_dets, config):
    """Indices of the candidate boxes licensed by a public detection.

    Each public detection licenses at most one candidate. In IoU mode pairs are taken by
    descending IoU and must exceed `filter_iou_threshold`; in center-distance mode the
    candidate box must contain the detection center and pairs are taken nearest first.
    """
    if config.filter_mode == FILTER_NONE:
        return list(range(len(candidates)))
    if not candidates or not public_dets:
        return []
    candidate_array = np.array([box.as_array() for box in candidates])
    det_array = np.array([box.as_array() for box in public_dets])

    pairs = []
    if config.filter_mode == FILTER_IOU:
        overlaps = iou_matrix(candidate_array, det_array)
        for i, j in zip(*np.nonzero(overlaps > config.filter_iou_threshold)):
            pairs.append((-overlaps[i, j], int(i), int(j)))
    else:
        for i, candidate in enumerate(candidates):
            for j, det in enumerate(public_dets):
                if candidate.contains_point(det.cx, det.cy):
                    distance = float(np.hypot(candidate.cx - det.cx, candidate.cy - det.cy))
                    pairs.append((distance, i, j))
    allowed = _greedy_pairs(pairs)
    logger.debug("Public detections license %d of %d initializations",
                 len(allowed), len(candidates))
    return allowed


class Tracker:
    """One tracking session over one sequence."""

    def __init__(self, model, config):
        self.model = model
        self.config = config
        self.tracks = []
        self.next_identity = 1
        self.prev_frame = None

    def _queries(self):
        if self.tracks:
            track_queries = Tensor(np.stack([track.query for track in self.tracks]))
        else:
            track_queries = Tensor(np.zeros((0, self.model.config.d_model)))
        fragment = QuerySet(
            track_queries=track_queries,
            track_identities=[track.identity for track in self.tracks])
        return self.model.query_set(fragment)

    def _update_tracks(self, scores, boxes, embeddings):
        """Apply the score rules to the track rows; returns the surviving tracks."""
        survivors = []
        for row, track in enumerate(self.tracks):
            score = float(scores[row])
            track.query = embeddings[row].copy()
            if track.active:
                if score >= self.config.sigma_track:
                    track.box = BoundingBox.from_array(boxes[row])
                    track.score = score
                else:
                    track.deactivate()
                    logger.debug("Track %d inactive (score %.3f)", track.identity, score)
            elif score >= self.config.sigma_track_reid:
                track.status = ACTIVE
                track.age = 0
                track.box = BoundingBox.from_array(boxes[row])
                track.score = score
                logger.debug("Track %d re-identified (score %.3f)", track.identity, score)
            else:
                track.age += 1
                if track.age > self.config.t_track_reid:
                    logger.debug("Track %d deleted after %d inactive frames",
                                 track.identity, track.age - 1)
                    continue
            survivors.append(track)
        return survivors

    def _suppress_tracks(self):
        active = [track for track in self.tracks if track.active]
        candidates = [NmsCandidate(t.box, t.score, True, t.identity) for t in active]
        kept = set(nms(candidates, self.config.sigma_nms))
        for index, track in enumerate(active):
            if index not in kept:
                track.deactivate()
                logger.debug("Track %d suppressed by NMS", track.identity)
        return [track for index, track in enumerate(active) if index in kept]

    def _initialize(self, scores, boxes, embeddings, n_track, kept_tracks, public_dets):
        rows = [row for row in range(n_track, len(scores))
                if scores[row] >= self.config.sigma_object]
        rows = [row for row in rows if boxes[row][2] > 0 and boxes[row][3] > 0]
        candidate_boxes = [BoundingBox.from_array(boxes[row]) for row in rows]
        allowed = filter_initializations(candidate_boxes, public_dets or [], self.config)
        rows = [rows[i] for i in allowed]
        if kept_tracks and rows:
            overlaps = iou_matrix(
                boxes[rows], np.array([track.box.as_array() for track in kept_tracks]))
            rows = [row for row, row_overlaps in zip(rows, overlaps)
                    if (row_overlaps <= self.config.sigma_nms).all()]
        candidates = [NmsCandidate(BoundingBox.from_array(boxes[row]), float(scores[row]))
                      for row in rows]
        new_tracks = []
        for index in nms(candidates, self.config.sigma_nms):
            row = rows[index]
            new_tracks.append(TrackState(
                identity=self.next_identity, query=embeddings[row].copy(),
                box=candidates[index].box, score=candidates[index].score))
            logger.debug("Track %d initialized (score %.3f)", self.next_identity,
                         candidates[index].score)
            self.next_identity += 1
        return new_tracks

    def step(self, frame, public_dets=None):
        """Process the next frame; returns the emitted objects (active tracks)."""
        prev_frame = frame if self.prev_frame is None else self.prev_frame
        prediction = self.model.predict(prev_frame, frame, self._queries())
        scores = prediction.scores()
        boxes = prediction.boxes.data
        embeddings = prediction.embeddings.data
        n_track = len(self.tracks)

        self.tracks = self._update_tracks(scores, boxes, embeddings)
        kept_tracks = self._suppress_tracks()
        new_tracks = self._initialize(
            scores, boxes, embeddings, n_track, kept_tracks, public_dets)
        self.tracks = sorted(self.tracks + new_tracks, key=lambda track: track.identity)
        self.prev_frame = frame
        return [track.as_object() for track in self.tracks if track.active]


def public_boxes(detections, frame_index):
    if detections is None:
        return None
    return [obj.box for obj in detections.frames[frame_index]]


def track_sequence(tracker, sequence, use_public_dets=False):
    """Run `tracker` over every frame of `sequence`; returns the hypotheses per frame."""
    frames = []
    for index, frame in enumerate(sequence.frames):
        dets = public_boxes(sequence.detections, index) if use_public_dets else None
        frames.append(tracker.step(frame, dets))
    logger.info("Tracked %r: %d frames, %d identities", sequence.name, len(frames),
                tracker.next_identity - 1)
    return frames
