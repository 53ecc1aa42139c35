"""Sequence directories in the MOTChallenge layout::

    <name>/seqinfo.ini
    <name>/img1/000001.png ...
    <name>/gt/gt.txt
    <name>/det/det.txt          (optional public detections)

Frames are 8-bit grayscale PNG files.
"""

import configparser
import logging
import os

import numpy as np
from PIL import Image

from sequences.logic import Sequence
from sequences.motfiles import read_mot, records_to_sequence, sequence_to_records, write_mot

logger = logging.getLogger(__name__)

IMAGE_DIR = 'img1'
IMAGE_EXT = '.png'
SEQINFO = 'seqinfo.ini'


class SequenceLayoutError(ValueError):
    """A sequence directory misses a required piece."""


def gt_path(directory):
    return os.path.join(directory, 'gt', 'gt.txt')


def det_path(directory):
    return os.path.join(directory, 'det', 'det.txt')


def _frame_path(directory, index):
    return os.path.join(directory, IMAGE_DIR, '{:06d}{}'.format(index + 1, IMAGE_EXT))


def save_sequence(sequence, directory):
    """Write `sequence` under `directory` (created if needed)."""
    for sub in (IMAGE_DIR, 'gt', 'det'):
        os.makedirs(os.path.join(directory, sub), exist_ok=True)

    width, height = sequence.image_size
    info = configparser.ConfigParser()
    info.optionxform = str
    info['Sequence'] = {
        'name': sequence.name,
        'imDir': IMAGE_DIR,
        'frameRate': '1',
        'seqLength': str(len(sequence)),
        'imWidth': str(width),
        'imHeight': str(height),
        'imExt': IMAGE_EXT,
    }
    if sequence.seed is not None:
        info['Sequence']['seed'] = str(sequence.seed)
    with open(os.path.join(directory, SEQINFO), 'wt', encoding='ascii', newline='\n') as fh:
        info.write(fh, space_around_delimiters=False)

    for index, frame in enumerate(sequence.frames):
        Image.fromarray(np.asarray(frame, dtype=np.uint8)).save(
            _frame_path(directory, index), format='PNG')

    write_mot(sequence_to_records(sequence.gt, ground_truth=True), gt_path(directory))
    if sequence.detections is not None:
        write_mot(sequence_to_records(sequence.detections), det_path(directory))
    logger.info("Sequence %r written to %s (%d frames)", sequence.name, directory, len(sequence))


def read_seqinfo(directory):
    path = os.path.join(directory, SEQINFO)
    info = configparser.ConfigParser()
    info.optionxform = str
    if not info.read(path):
        raise SequenceLayoutError("No {} in {}".format(SEQINFO, directory))
    try:
        section = info['Sequence']
        return {
            'name': section.get('name', os.path.basename(os.path.normpath(directory))),
            'length': int(section['seqLength']),
            'image_size': (int(section['imWidth']), int(section['imHeight'])),
            'seed': int(section['seed']) if 'seed' in section else None,
        }
    except (KeyError, ValueError) as err:
        raise SequenceLayoutError("Bad {} in {}: {}".format(SEQINFO, directory, err))


def load_gt(directory, info=None):
    info = info or read_seqinfo(directory)
    if not os.path.exists(gt_path(directory)):
        raise SequenceLayoutError("No ground truth in {}".format(directory))
    return records_to_sequence(read_mot(gt_path(directory)), info['image_size'], info['length'])


def load_detections(directory, info=None):
    """Public detections of a sequence; None when it has no det/det.txt."""
    info = info or read_seqinfo(directory)
    if not os.path.exists(det_path(directory)):
        return None
    return records_to_sequence(
        read_mot(det_path(directory)), info['image_size'], info['length'])


def load_frames(directory, info=None):
    info = info or read_seqinfo(directory)
    frames = []
    for index in range(info['length']):
        path = _frame_path(directory, index)
        if not os.path.exists(path):
            raise SequenceLayoutError("Missing frame {}".format(path))
        with Image.open(path) as image:
            frames.append(np.asarray(image.convert('L'), dtype=np.uint8))
    return frames


def load_sequence(directory):
    info = read_seqinfo(directory)
    sequence = Sequence(
        name=info['name'], frames=load_frames(directory, info), gt=load_gt(directory, info),
        detections=load_detections(directory, info), seed=info['seed'])
    logger.debug("Loaded sequence %r from %s", sequence.name, directory)
    return sequence


def find_sequences(root):
    """Sequence directories directly under `root` (or `root` itself), sorted by name."""
    if os.path.exists(os.path.join(root, SEQINFO)):
        return [root]
    if not os.path.isdir(root):
        raise SequenceLayoutError("{} is not a directory".format(root))
    return sorted(
        os.path.join(root, name) for name in os.listdir(root)
        if os.path.exists(os.path.join(root, name, SEQINFO)))
