"""CLEAR MOT and identity metrics of hypotheses against ground truth.

Reports keep raw counts; every ratio (MOTA, IDF1, recall...) is derived from them, so
summing reports of several sequences and then taking the ratios gives the combined figures.
"""

import csv
import logging
from dataclasses import dataclass, fields

import numpy as np

from matching.boxes import iou_matrix
from matching.hungarian import linear_assignment

logger = logging.getLogger(__name__)

IOU_THRESHOLD = 0.5
MOSTLY_TRACKED = 0.8
MOSTLY_LOST = 0.2

# cost of a gt/hypothesis pair below the IoU threshold; far above any real cost (<= 1)
_FORBIDDEN = 1e6

TOTAL_NAME = 'ALL'
TABLE_COLUMNS = (
    ('MOTA', 'mota'), ('IDF1', 'idf1'), ('MT', 'mt'), ('ML', 'ml'), ('FP', 'fp'),
    ('FN', 'fn'), ('ID Sw.', 'id_switches'), ('Rcll', 'recall'), ('Prcn', 'precision'),
    ('IDP', 'idp'), ('IDR', 'idr'))
CSV_COLUMNS = (
    'sequence', 'mota', 'idf1', 'mt', 'ml', 'fp', 'fn', 'id_switches', 'recall', 'precision',
    'idp', 'idr', 'idtp', 'gt_total', 'hyp_total', 'gt_tracks')
_RATIOS = ('mota', 'idf1', 'recall', 'precision', 'idp', 'idr')


def _ratio(numerator, denominator, empty=1.0):
    return numerator / denominator if denominator else empty


@dataclass
class MetricReport:
    """Counts of one evaluation; `name` is the sequence (or ALL for a sum of reports)."""
    name: str = ''
    gt_total: int = 0
    hyp_total: int = 0
    matches: int = 0
    fp: int = 0
    fn: int = 0
    id_switches: int = 0
    mt: int = 0
    ml: int = 0
    gt_tracks: int = 0
    idtp: int = 0

    @property
    def mota(self):
        """1 - (FP + FN + ID Sw.) / gt boxes; without gt boxes, the errors count whole."""
        return 1.0 - (self.fp + self.fn + self.id_switches) / max(self.gt_total, 1)

    @property
    def idf1(self):
        return _ratio(2 * self.idtp, self.gt_total + self.hyp_total)

    @property
    def idp(self):
        return _ratio(self.idtp, self.hyp_total)

    @property
    def idr(self):
        return _ratio(self.idtp, self.gt_total)

    @property
    def recall(self):
        return _ratio(self.matches, self.gt_total)

    @property
    def precision(self):
        return _ratio(self.matches, self.hyp_total)

    def __add__(self, other):
        counts = {f.name: getattr(self, f.name) + getattr(other, f.name)
                  for f in fields(self) if f.name != 'name'}
        return MetricReport(name=TOTAL_NAME, **counts)


def _frame_objects(sequence, index):
    if index >= len(sequence.frames):
        return []
    return sequence.frames[index]


def _boxes(objects):
    return np.array([obj.box.as_array() for obj in objects]).reshape(-1, 4)


def clear_mot(gt, hyp, iou_threshold=IOU_THRESHOLD):
    """CLEAR MOT counts (MOTA family) of `hyp` against `gt`.

    Per frame, the correspondences of the previous frame are kept while their IoU stays at or
    above the threshold; the remaining pairs are assigned with the Hungarian method on
    1 - IoU. A match counts as an identity switch when the hypothesis differs from the one
    last matched to that gt identity.
    """
    report = MetricReport()
    previous = {}
    last_hypothesis = {}
    present, covered = {}, {}

    for index in range(max(len(gt.frames), len(hyp.frames))):
        gts = _frame_objects(gt, index)
        hyps = _frame_objects(hyp, index)
        overlaps = iou_matrix(_boxes(gts), _boxes(hyps))
        gt_row = {obj.identity: i for i, obj in enumerate(gts)}
        hyp_col = {obj.identity: j for j, obj in enumerate(hyps)}

        current = {}
        for gt_id, hyp_id in previous.items():
            if gt_id in gt_row and hyp_id in hyp_col:
                if overlaps[gt_row[gt_id], hyp_col[hyp_id]] >= iou_threshold:
                    current[gt_id] = hyp_id

        free_rows = [i for i, obj in enumerate(gts) if obj.identity not in current]
        used = set(current.values())
        free_cols = [j for j, obj in enumerate(hyps) if obj.identity not in used]
        if free_rows and free_cols:
            sub = overlaps[np.ix_(free_rows, free_cols)]
            cost = np.where(sub >= iou_threshold, 1.0 - sub, _FORBIDDEN)
            for r, c in linear_assignment(cost):
                if sub[r, c] >= iou_threshold:
                    current[gts[free_rows[r]].identity] = hyps[free_cols[c]].identity

        for gt_id, hyp_id in current.items():
            if gt_id in last_hypothesis and last_hypothesis[gt_id] != hyp_id:
                report.id_switches += 1
                logger.debug("Frame %d: gt %s switched from %s to %s", index + 1, gt_id,
                             last_hypothesis[gt_id], hyp_id)
            last_hypothesis[gt_id] = hyp_id
            covered[gt_id] = covered.get(gt_id, 0) + 1
        for obj in gts:
            present[obj.identity] = present.get(obj.identity, 0) + 1

        report.gt_total += len(gts)
        report.hyp_total += len(hyps)
        report.matches += len(current)
        report.fp += len(hyps) - len(current)
        report.fn += len(gts) - len(current)
        previous = current

    report.gt_tracks = len(present)
    for gt_id, count in present.items():
        coverage = covered.get(gt_id, 0) / count
        if coverage >= MOSTLY_TRACKED:
            report.mt += 1
        elif coverage <= MOSTLY_LOST:
            report.ml += 1
    return report


def identity_overlaps(gt, hyp, iou_threshold=IOU_THRESHOLD):
    """Frames where each gt trajectory and hypothesis trajectory overlap enough.

    Returns (gt identities, hypothesis identities, counts) with counts[i, j] the number of
    frames in which gt i and hypothesis j have IoU >= threshold.
    """
    gt_ids = gt.identities()
    hyp_ids = hyp.identities()
    gt_index = {identity: i for i, identity in enumerate(gt_ids)}
    hyp_index = {identity: j for j, identity in enumerate(hyp_ids)}
    counts = np.zeros((len(gt_ids), len(hyp_ids)), dtype=np.int64)
    for index in range(max(len(gt.frames), len(hyp.frames))):
        gts = _frame_objects(gt, index)
        hyps = _frame_objects(hyp, index)
        overlaps = iou_matrix(_boxes(gts), _boxes(hyps))
        for i, j in zip(*np.nonzero(overlaps >= iou_threshold)):
            counts[gt_index[gts[i].identity], hyp_index[hyps[j].identity]] += 1
    return gt_ids, hyp_ids, counts


def identity_true_positives(gt, hyp, iou_threshold=IOU_THRESHOLD):
    """IDTP: matched boxes under the best one-to-one gt/hypothesis trajectory pairing."""
    _, _, counts = identity_overlaps(gt, hyp, iou_threshold)
    if not counts.size:
        return 0
    pairs = linear_assignment(-counts.astype(np.float64))
    return int(sum(counts[i, j] for i, j in pairs))


def idf1(gt, hyp, iou_threshold=IOU_THRESHOLD):
    """2 IDTP / (gt boxes + hypothesis boxes); 1.0 when both are empty."""
    idtp = identity_true_positives(gt, hyp, iou_threshold)
    return _ratio(2 * idtp, gt.n_boxes + hyp.n_boxes)


def evaluate(name, gt, hyp, iou_threshold=IOU_THRESHOLD):
    """Full report (CLEAR MOT plus identity counts) of one sequence."""
    report = clear_mot(gt, hyp, iou_threshold)
    report.name = name
    report.idtp = identity_true_positives(gt, hyp, iou_threshold)
    logger.info("%s: MOTA %.3f IDF1 %.3f (FP %d, FN %d, ID Sw. %d)",
                name, report.mota, report.idf1, report.fp, report.fn, report.id_switches)
    return report


def total(reports):
    """The ALL row: counts summed first, ratios taken afterwards."""
    combined = MetricReport(name=TOTAL_NAME)
    for report in reports:
        combined = combined + report
    return combined


def _cell(report, attribute):
    value = getattr(report, attribute)
    if attribute in _RATIOS:
        return '{:.1f}'.format(100 * value)
    return str(value)


def format_table(reports):
    """Plain-text table, one row per report; ratios are percentages."""
    header = ['Sequence'] + [title for title, _ in TABLE_COLUMNS]
    rows = [[report.name] + [_cell(report, attr) for _, attr in TABLE_COLUMNS]
            for report in reports]
    widths = [max(len(row[i]) for row in [header] + rows) for i in range(len(header))]
    lines = []
    for row in [header] + rows:
        cells = [row[0].ljust(widths[0])] + [
            cell.rjust(width) for cell, width in zip(row[1:], widths[1:])]
        lines.append('  '.join(cells).rstrip())
    return '\n'.join(lines) + '\n'


def write_csv(reports, target):
    writer = csv.writer(target, lineterminator='\n')
    writer.writerow(CSV_COLUMNS)
    for report in reports:
        row = [report.name]
        for column in CSV_COLUMNS[1:]:
            value = getattr(report, column)
            row.append('{:.6f}'.format(value) if column in _RATIOS else value)
        writer.writerow(row)
