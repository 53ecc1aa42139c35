"""Sequences with per-frame ground truth, and the synthetic sequence generator.

Synthetic objects are textured rectangles moving at constant velocity plus noise, bouncing on
the frame borders. Ground truth keeps the full box of an object while it is occluded; the
occlusion shows up in its `visibility` only.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from deskformer.errors import ConfigurationError
from deskformer.rng import generator
from matching.boxes import BoundingBox, LabeledObject
from matching.logic import DuplicateIdentityError

logger = logging.getLogger(__name__)

# random streams derived from the generator seed
_MOTION_STREAM = 0
_TEXTURE_STREAM = 1
_DETECTION_STREAM = 2

BACKGROUND_LEVEL = 40
DETECTION_IDENTITY = -1


@dataclass
class SequenceGT:
    """Per-frame labeled boxes (ground truth or hypotheses) of one sequence.

    `frames[i]` holds the objects of frame i (0-based); `image_size` is (width, height) in
    pixels.
    """
    frames: list
    image_size: tuple

    def __post_init__(self):
        for index, objects in enumerate(self.frames):
            identities = [obj.identity for obj in objects if obj.identity != DETECTION_IDENTITY]
            if len(identities) != len(set(identities)):
                raise DuplicateIdentityError(
                    "Frame {} repeats an identity: {}".format(index, identities))

    def __len__(self):
        return len(self.frames)

    def identities(self):
        return sorted({obj.identity for objects in self.frames for obj in objects})

    def track(self, identity):
        """The (frame index, object) pairs of one identity, in frame order."""
        return [(index, obj) for index, objects in enumerate(self.frames)
                for obj in objects if obj.identity == identity]

    @property
    def n_boxes(self):
        return sum(len(objects) for objects in self.frames)


@dataclass
class Sequence:
    name: str
    frames: list
    gt: SequenceGT
    detections: SequenceGT = None
    seed: int = None

    def __len__(self):
        return len(self.frames)

    @property
    def image_size(self):
        return self.gt.image_size


@dataclass(frozen=True)
class SynthConfig:
    n_objects: int = 3
    seq_len: int = 20
    image_width: int = 64
    image_height: int = 64
    min_speed: float = 0.5
    max_speed: float = 2.0
    min_size: float = 10
    max_size: float = 18
    birth_prob: float = 0.0
    death_prob: float = 0.0
    crossing_prob: float = 0.5
    motion_noise: float = 0.2
    det_miss_prob: float = 0.1
    det_jitter_frac: float = 0.02
    det_false_prob: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_objects < 1:
            raise ConfigurationError("n_objects must be at least 1")
        if self.seq_len < 2:
            raise ConfigurationError("seq_len must be at least 2")
        if not 0 < self.min_size <= self.max_size:
            raise ConfigurationError("Need 0 < min_size <= max_size")
        if self.max_size >= min(self.image_width, self.image_height):
            raise ConfigurationError("Objects must be smaller than the frame")
        if not 0 <= self.min_speed <= self.max_speed:
            raise ConfigurationError("Need 0 <= min_speed <= max_speed")
        if self.motion_noise < 0:
            raise ConfigurationError("motion_noise can not be negative")
        for name in ('birth_prob', 'death_prob', 'crossing_prob', 'det_miss_prob',
                     'det_false_prob'):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigurationError("{} must be a probability".format(name))
        if not 0 <= self.det_jitter_frac < 1:
            raise ConfigurationError("det_jitter_frac must be in [0, 1)")


@dataclass
class _Mover:
    identity: int
    x: float
    y: float
    w: float
    h: float
    vx: float
    vy: float
    texture: np.ndarray
    noisy: bool = True
    born: int = 0
    died: int = None
    boxes: dict = field(default_factory=dict)


def _texture(rng, size):
    """Oriented stripes over a per-object base intensity, tiled to `size` pixels."""
    base = rng.uniform(110, 200)
    amplitude = rng.uniform(30, 55)
    angle = rng.uniform(0, math.pi)
    period = rng.uniform(3, 7)
    rows, cols = np.mgrid[0:size, 0:size]
    phase = (cols * math.cos(angle) + rows * math.sin(angle)) * 2 * math.pi / period
    return np.clip(base + amplitude * np.sign(np.sin(phase)), 0, 255)


def _spawn(identity, config, motion, textures, frame_index):
    w = motion.uniform(config.min_size, config.max_size)
    h = motion.uniform(config.min_size, config.max_size)
    speed = motion.uniform(config.min_speed, config.max_speed)
    angle = motion.uniform(0, 2 * math.pi)
    return _Mover(
        identity=identity,
        x=motion.uniform(w / 2, config.image_width - w / 2),
        y=motion.uniform(h / 2, config.image_height - h / 2),
        w=w, h=h, vx=speed * math.cos(angle), vy=speed * math.sin(angle),
        texture=_texture(textures, int(math.ceil(config.max_size)) + 1), born=frame_index)


def _set_crossing(first, second, config):
    """Put two movers on straight paths meeting at the frame center halfway through."""
    meet_at = (config.seq_len - 1) // 2
    longest = max(meet_at, config.seq_len - 1 - meet_at, 1)
    center_x, center_y = config.image_width / 2, config.image_height / 2
    for mover, turn in ((first, 0.0), (second, math.pi / 2)):
        speed = math.hypot(mover.vx, mover.vy)
        angle = math.atan2(mover.vy, mover.vx) + turn
        room_x = (center_x - mover.w / 2) / longest
        room_y = (center_y - mover.h / 2) / longest
        vx, vy = speed * math.cos(angle), speed * math.sin(angle)
        scale = min(1.0, room_x / max(abs(vx), 1e-12), room_y / max(abs(vy), 1e-12))
        mover.vx, mover.vy = vx * scale, vy * scale
        mover.x = center_x - mover.vx * meet_at
        mover.y = center_y - mover.vy * meet_at
        mover.noisy = False


def _advance(mover, config, motion):
    if mover.noisy and config.motion_noise:
        mover.vx += motion.normal(0, config.motion_noise)
        mover.vy += motion.normal(0, config.motion_noise)
    mover.x += mover.vx
    mover.y += mover.vy
    for axis, extent in (('x', config.image_width), ('y', config.image_height)):
        half = (mover.w if axis == 'x' else mover.h) / 2
        velocity = 'v' + axis
        position = getattr(mover, axis)
        if position - half < 0:
            setattr(mover, axis, 2 * half - position)
            setattr(mover, velocity, abs(getattr(mover, velocity)))
        elif position + half > extent:
            setattr(mover, axis, 2 * (extent - half) - position)
            setattr(mover, velocity, -abs(getattr(mover, velocity)))
        # a very fast mover may overshoot the reflection; keep it inside anyway
        setattr(mover, axis, min(max(getattr(mover, axis), half), extent - half))


def _pixel_span(low, high, extent):
    return max(int(round(low)), 0), min(int(round(high)), extent)


def _render(movers, frame_index, config, background):
    """Draw the live movers (higher identities on top) and measure their visibility."""
    frame = background.copy()
    owner = np.full(frame.shape, -1, dtype=np.int64)
    live = [m for m in movers if frame_index in m.boxes]
    spans = {}
    for mover in live:
        box = mover.boxes[frame_index]
        x1, x2 = _pixel_span(box[0] - box[2] / 2, box[0] + box[2] / 2, config.image_width)
        y1, y2 = _pixel_span(box[1] - box[3] / 2, box[1] + box[3] / 2, config.image_height)
        spans[mover.identity] = (x1, x2, y1, y2)
        frame[y1:y2, x1:x2] = mover.texture[:y2 - y1, :x2 - x1]
        owner[y1:y2, x1:x2] = mover.identity

    visibility = {}
    for mover in live:
        x1, x2, y1, y2 = spans[mover.identity]
        area = (x2 - x1) * (y2 - y1)
        shown = int((owner[y1:y2, x1:x2] == mover.identity).sum())
        visibility[mover.identity] = shown / area if area else 0.0
    return np.round(frame).astype(np.uint8), visibility


def _to_object(mover, frame_index, config, visibility):
    x, y, w, h = mover.boxes[frame_index]
    box = BoundingBox(
        x / config.image_width, y / config.image_height,
        w / config.image_width, h / config.image_height)
    return LabeledObject(mover.identity, box, visibility=round(visibility, 4))


def generate_sequence(config):
    """Render `config.seq_len` frames and their ground truth."""
    motion = generator(config.seed, _MOTION_STREAM)
    textures = generator(config.seed, _TEXTURE_STREAM)
    background = BACKGROUND_LEVEL + textures.uniform(
        -15, 15, size=(config.image_height, config.image_width))

    movers = [_spawn(i + 1, config, motion, textures, 0) for i in range(config.n_objects)]
    next_identity = config.n_objects + 1
    if config.n_objects >= 2 and motion.random() < config.crossing_prob:
        _set_crossing(movers[0], movers[1], config)
        logger.debug("Identities %d and %d cross mid-sequence", 1, 2)

    for frame_index in range(config.seq_len):
        if frame_index:
            if motion.random() < config.birth_prob:
                movers.append(_spawn(next_identity, config, motion, textures, frame_index))
                next_identity += 1
            for mover in movers:
                if mover.died is not None or mover.born == frame_index:
                    continue
                if motion.random() < config.death_prob:
                    mover.died = frame_index
                    continue
                _advance(mover, config, motion)
        for mover in movers:
            if mover.died is None:
                mover.boxes[frame_index] = (mover.x, mover.y, mover.w, mover.h)

    frames, gt_frames = [], []
    for frame_index in range(config.seq_len):
        frame, visibility = _render(movers, frame_index, config, background)
        frames.append(frame)
        gt_frames.append([
            _to_object(m, frame_index, config, visibility[m.identity])
            for m in movers if frame_index in m.boxes])

    gt = SequenceGT(gt_frames, (config.image_width, config.image_height))
    logger.debug("Generated %d frames with %d identities", len(frames), len(gt.identities()))
    return frames, gt


def synthetic_detections(gt, config):
    """Public detections: jittered ground truth with misses and scattered false positives."""
    rng = generator(config.seed, _DETECTION_STREAM)
    extent = np.array([config.image_width, config.image_height], dtype=float)
    side_low, side_high = config.min_size / extent, config.max_size / extent
    frames = []
    for objects in gt.frames:
        detections = []
        for obj in objects:
            if rng.random() < config.det_miss_prob:
                continue
            values = obj.box.as_array() + rng.uniform(
                -config.det_jitter_frac, config.det_jitter_frac, size=4)
            values[2:] = np.maximum(values[2:], 1e-3)
            detections.append(LabeledObject(
                DETECTION_IDENTITY, BoundingBox.from_array(values),
                confidence=float(rng.uniform(0.5, 1.0))))
        if rng.random() < config.det_false_prob:
            side = rng.uniform(side_low, side_high, size=2)
            center = rng.uniform(side / 2, 1 - side / 2)
            detections.append(LabeledObject(
                DETECTION_IDENTITY, BoundingBox(center[0], center[1], side[0], side[1]),
                confidence=float(rng.uniform(0.3, 0.7))))
        frames.append(detections)
    return SequenceGT(frames, gt.image_size)


def simulate(name, config):
    """A complete synthetic sequence with public detections."""
    frames, gt = generate_sequence(config)
    return Sequence(
        name=name, frames=frames, gt=gt, detections=synthetic_detections(gt, config),
        seed=config.seed)


def relabeled(gt, mapping):
    """Copy of `gt` with identities renamed through `mapping`."""
    return SequenceGT(
        [[replace(obj, identity=mapping.get(obj.identity, obj.identity)) for obj in objects]
         for objects in gt.frames],
        gt.image_size)
