"""MOTChallenge text files.

Results and detections use ten columns::

    frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z

with x, y, z written as -1. Ground truth uses the nine MOT17 columns::

    frame,id,bb_left,bb_top,bb_width,bb_height,consider,class,visibility

Frames and identities are 1-based integers; box values are pixels. Writing puts two decimals
on box values and confidences, so a file read and written once is stable afterwards.
"""

import logging
from dataclasses import dataclass, field

from matching.boxes import BoundingBox, LabeledObject
from sequences.logic import DETECTION_IDENTITY, SequenceGT

logger = logging.getLogger(__name__)

RESULT_EXTRA = (-1, -1, -1)
PEDESTRIAN_CLASS = 1


class MotParseError(ValueError):
    """A malformed MOTChallenge file, or a malformed line in one."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = "line {}: {}".format(line_number, message)
        super().__init__(message)


@dataclass(frozen=True)
class MotRecord:
    frame: int
    identity: int
    left: float
    top: float
    width: float
    height: float
    confidence: float = 1.0
    extra: tuple = RESULT_EXTRA
    line_number: int = field(default=None, compare=False)

    @property
    def is_ground_truth(self):
        return len(self.extra) == 2


def _number(text, what, line_number):
    try:
        value = float(text)
    except ValueError:
        raise MotParseError("{} is not a number: {!r}".format(what, text), line_number)
    if value != value or value in (float('inf'), float('-inf')):
        raise MotParseError("{} is not finite".format(what), line_number)
    return value


def _integer(text, what, line_number):
    value = _number(text, what, line_number)
    if value != int(value):
        raise MotParseError("{} must be an integer, got {!r}".format(what, text), line_number)
    return int(value)


def parse_line(line, line_number=None):
    fields = [f.strip() for f in line.strip().split(',')]
    if len(fields) not in (9, 10):
        raise MotParseError(
            "expected 9 or 10 comma separated values, got {}".format(len(fields)), line_number)
    frame = _integer(fields[0], 'frame', line_number)
    identity = _integer(fields[1], 'id', line_number)
    left, top, width, height = (
        _number(value, name, line_number)
        for value, name in zip(fields[2:6], ('bb_left', 'bb_top', 'bb_width', 'bb_height')))
    confidence = _number(fields[6], 'conf', line_number)
    extra = tuple(_number(value, 'extra column', line_number) for value in fields[7:])

    if frame < 1:
        raise MotParseError("frame numbers start at 1, got {}".format(frame), line_number)
    if width < 0 or height < 0:
        raise MotParseError("negative box size {}x{}".format(width, height), line_number)
    return MotRecord(frame, identity, left, top, width, height, confidence, extra, line_number)


def _lines(source):
    if hasattr(source, 'read'):
        return source.read().splitlines()
    try:
        with open(source, 'rt', encoding='ascii') as fh:
            return fh.read().splitlines()
    except UnicodeDecodeError as err:
        raise MotParseError("{}: not an ASCII text file ({})".format(source, err))


def read_mot(source):
    """Parse a file (path or text stream); records come back sorted by frame, then id."""
    records = []
    for line_number, line in enumerate(_lines(source), start=1):
        if not line.strip():
            continue
        records.append(parse_line(line, line_number))
    records.sort(key=lambda r: (r.frame, r.identity, r.line_number))
    return records


def _extra_value(value):
    return str(int(value)) if value == int(value) else '{:g}'.format(value)


def format_record(record):
    head = '{},{},{:.2f},{:.2f},{:.2f},{:.2f},{:.2f}'.format(
        record.frame, record.identity, record.left, record.top, record.width, record.height,
        record.confidence)
    return ','.join([head] + [_extra_value(value) for value in record.extra])


def write_mot(records, target):
    """Write records (sorted by frame, then id) to a path or a text stream."""
    ordered = sorted(records, key=lambda r: (r.frame, r.identity))
    text = ''.join(format_record(record) + '\n' for record in ordered)
    if hasattr(target, 'write'):
        target.write(text)
    else:
        with open(target, 'wt', encoding='ascii', newline='\n') as fh:
            fh.write(text)


def normalize(pixel_box, image_size):
    """Pixel (left, top, width, height) -> normalized center-format BoundingBox."""
    left, top, width, height = pixel_box
    image_width, image_height = image_size
    if image_width <= 0 or image_height <= 0:
        raise ValueError("Image size must be positive, got {}".format(image_size))
    return BoundingBox(
        (left + width / 2) / image_width, (top + height / 2) / image_height,
        width / image_width, height / image_height)


def denormalize(box, image_size):
    """Normalized center-format BoundingBox -> pixel (left, top, width, height)."""
    image_width, image_height = image_size
    if image_width <= 0 or image_height <= 0:
        raise ValueError("Image size must be positive, got {}".format(image_size))
    width = box.w * image_width
    height = box.h * image_height
    return (box.cx * image_width - width / 2, box.cy * image_height - height / 2, width, height)


def records_to_sequence(records, image_size, n_frames=None):
    """Group records per frame into a SequenceGT.

    Ground truth rows that are not to be considered (flag 0) or are not pedestrians are left
    out; rows without area are skipped with a warning.
    """
    if n_frames is None:
        n_frames = max((r.frame for r in records), default=0)
    frames = [[] for _ in range(n_frames)]
    seen = set()
    for record in records:
        if record.frame > n_frames:
            raise MotParseError("frame {} beyond the sequence length {}".format(
                record.frame, n_frames), record.line_number)
        label = 0
        visibility = 1.0
        if record.is_ground_truth:
            if record.confidence == 0 or int(record.extra[0]) != PEDESTRIAN_CLASS:
                continue
            label = int(record.extra[0]) - PEDESTRIAN_CLASS
            visibility = record.extra[1]
        if record.width == 0 or record.height == 0:
            logger.warning("Skipping box without area at line %s", record.line_number)
            continue
        key = (record.frame, record.identity)
        if record.identity != DETECTION_IDENTITY and key in seen:
            raise MotParseError("id {} repeated in frame {}".format(
                record.identity, record.frame), record.line_number)
        seen.add(key)
        box = normalize((record.left, record.top, record.width, record.height), image_size)
        frames[record.frame - 1].append(LabeledObject(
            record.identity, box, label=label, visibility=visibility,
            confidence=record.confidence))
    return SequenceGT(frames, tuple(image_size))


def sequence_to_records(sequence_gt, ground_truth=False):
    """Flatten a SequenceGT into records; ground truth gets the nine-column layout."""
    records = []
    for index, objects in enumerate(sequence_gt.frames):
        for obj in objects:
            left, top, width, height = denormalize(obj.box, sequence_gt.image_size)
            if ground_truth:
                extra = (obj.label + PEDESTRIAN_CLASS, obj.visibility)
            else:
                extra = RESULT_EXTRA
            records.append(MotRecord(
                index + 1, obj.identity, left, top, width, height, obj.confidence, extra))
    return records
