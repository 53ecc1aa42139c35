import logging
from dataclasses import dataclass, field

import numpy as np

from matching.costs import match_cost_matrix
from matching.hungarian import hungarian

logger = logging.getLogger(__name__)


class DuplicateIdentityError(ValueError):
    """The same identity appears twice where identities must be unique."""


@dataclass(frozen=True)
class Pair:
    gt_index: int
    prediction_index: int
    provenance: str


@dataclass
class Assignment:
    """Injective mapping of ground truth to prediction rows; the rest is background."""

    BY_IDENTITY = 'by_identity'
    BY_COST = 'by_cost'

    pairs: list = field(default_factory=list)
    background_predictions: frozenset = frozenset()

    def prediction_for(self, gt_index):
        for pair in self.pairs:
            if pair.gt_index == gt_index:
                return pair.prediction_index


def _check_unique(identities, what):
    seen = set()
    for identity in identities:
        if identity is None:
            continue
        if identity in seen:
            raise DuplicateIdentityError("Duplicate {} identity: {}".format(what, identity))
        seen.add(identity)


def constrained_assignment(gts, track_identities, class_probs, boxes, weights):
    """Map the ground truth of frame t onto the joint set of track and object query rows.

    `track_identities` is aligned with the first prediction rows (the track query slots);
    None marks a slot without identity (a spawned false positive). The remaining rows are
    the object query slots. Ground truth whose identity owns a track slot takes that slot;
    track slots whose identity is absent from `gts` become background; the rest of the
    ground truth is matched to object slots by minimum `match_cost`; unmatched rows are
    background.
    """
    _check_unique([gt.identity for gt in gts], 'ground truth')
    _check_unique(track_identities, 'track query')

    class_probs = np.asarray(class_probs, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    n_rows = len(boxes)
    n_track = len(track_identities)
    if n_track > n_rows:
        raise ValueError("More track slots ({}) than prediction rows ({})".format(
            n_track, n_rows))

    slot_of_identity = {
        identity: row for row, identity in enumerate(track_identities) if identity is not None}

    pairs = []
    new_gt_indexes = []
    for gt_index, gt in enumerate(gts):
        row = slot_of_identity.get(gt.identity)
        if row is None:
            new_gt_indexes.append(gt_index)
        else:
            pairs.append(Pair(gt_index, row, Assignment.BY_IDENTITY))

    object_rows = np.arange(n_track, n_rows)
    if new_gt_indexes:
        new_gts = [gts[i] for i in new_gt_indexes]
        cost = match_cost_matrix(new_gts, class_probs[object_rows], boxes[object_rows], weights)
        for new_index, col in hungarian(cost):
            pairs.append(Pair(
                new_gt_indexes[new_index], int(object_rows[col]), Assignment.BY_COST))

    pairs.sort(key=lambda pair: pair.gt_index)
    assigned = {pair.prediction_index for pair in pairs}
    background = frozenset(row for row in range(n_rows) if row not in assigned)
    logger.debug(
        "Assignment: %d by identity, %d by cost, %d background",
        sum(p.provenance == Assignment.BY_IDENTITY for p in pairs),
        sum(p.provenance == Assignment.BY_COST for p in pairs), len(background))
    return Assignment(pairs=pairs, background_predictions=background)
