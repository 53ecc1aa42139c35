"""Track augmentations and frame-pair simulation used while training.

All functions take an explicit `numpy.random.Generator`; the same generator state always
produces the same output.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
from PIL import Image

from deskformer.errors import ConfigurationError
from matching.boxes import BoundingBox, iou_matrix

logger = logging.getLogger(__name__)

# cropped ground truth keeping less than this share of its area is dropped
MIN_VISIBLE_SHARE = 0.25
MIN_BOX_SIDE = 1e-3


@dataclass(frozen=True)
class AugmentConfig:
    p_fn: float = 0.4
    p_fp: float = 0.1
    frame_range: int = 5
    past_only: bool = False
    sim_crop_frac: float = 0.2
    jitter_frac: float = 0.01
    sim_pair_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ('p_fn', 'p_fp', 'sim_pair_prob'):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigurationError("{} must be a probability".format(name))
        for name in ('sim_crop_frac', 'jitter_frac'):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigurationError("{} must be in [0, 1)".format(name))
        if self.frame_range < 1:
            raise ConfigurationError("frame_range must be at least 1")


@dataclass(frozen=True)
class TrackCandidate:
    """A prediction row of frame t-1 that may become a track query for frame t.

    `identity` is None for rows that enter as false positives.
    """
    row: int
    identity: object
    box: np.ndarray


def sample_prev_frame(t, seq_len, config, rng):
    """Pick the frame that plays t-1, uniformly among the frames within `frame_range` of t."""
    if seq_len < 2:
        raise ConfigurationError("Sampling a frame pair needs at least 2 frames")
    if not 0 <= t < seq_len:
        raise ConfigurationError("Frame {} outside a sequence of {}".format(t, seq_len))
    low = max(0, t - config.frame_range)
    high = min(seq_len - 1, t + config.frame_range)
    candidates = [f for f in range(low, high + 1) if f != t]
    if config.past_only and t > 0:
        candidates = [f for f in candidates if f < t]
    return candidates[int(rng.integers(len(candidates)))]


def drop_false_negatives(candidates, config, rng):
    """Remove each candidate independently with probability `p_fn`."""
    keep = rng.random(len(candidates)) >= config.p_fn
    return [candidate for candidate, kept in zip(candidates, keep) if kept]


def spawn_false_positives(candidates, background, config, rng):
    """Let every candidate bring in, with probability `p_fp`, the background row it overlaps most.

    Background rows are used at most once; spawned candidates carry no identity.
    """
    draws = rng.random(len(candidates))
    if not background:
        return list(candidates)
    pool = list(background)
    spawned = []
    for candidate, draw in zip(candidates, draws):
        if draw >= config.p_fp or not pool:
            continue
        overlaps = iou_matrix(candidate.box, np.array([b.box for b in pool]))[0]
        chosen = pool.pop(int(np.argmax(overlaps)))
        spawned.append(replace(chosen, identity=None))
    if spawned:
        logger.debug("Spawned %d false positive track queries", len(spawned))
    return list(candidates) + spawned


def jitter_gt(gts, jitter_frac, rng):
    """Shift every box coordinate uniformly within ±jitter_frac; sides stay ≥ 1e-3."""
    if not gts:
        return []
    offsets = rng.uniform(-jitter_frac, jitter_frac, size=(len(gts), 4))
    jittered = []
    for gt, offset in zip(gts, offsets):
        values = gt.box.as_array() + offset
        values[2:] = np.maximum(values[2:], MIN_BOX_SIDE)
        jittered.append(replace(gt, box=BoundingBox.from_array(values)))
    return jittered


@dataclass(frozen=True)
class CropView:
    """A crop window (pixels) resized back to the full frame."""
    left: float
    top: float
    width: float
    height: float
    frame_width: int
    frame_height: int

    def apply(self, box):
        """Map a normalized box of the original image into this view's normalized space."""
        scale_x = self.frame_width / self.width
        scale_y = self.frame_height / self.height
        return BoundingBox(
            (box.cx * self.frame_width - self.left) / self.width,
            (box.cy * self.frame_height - self.top) / self.height,
            box.w * scale_x, box.h * scale_y)

    def render(self, image):
        pixels = Image.fromarray(image)
        window = (self.left, self.top, self.left + self.width, self.top + self.height)
        resized = pixels.resize(
            (self.frame_width, self.frame_height), Image.Resampling.BILINEAR, box=window)
        return np.asarray(resized, dtype=np.uint8)


def random_view(frame_width, frame_height, crop_frac, rng):
    shrink = rng.uniform(0, crop_frac, size=2)
    width = frame_width * (1 - shrink[0])
    height = frame_height * (1 - shrink[1])
    left = rng.uniform(0, frame_width - width) if width < frame_width else 0.0
    top = rng.uniform(0, frame_height - height) if height < frame_height else 0.0
    return CropView(float(left), float(top), float(width), float(height),
                    frame_width, frame_height)


def _clip_to_view(box):
    """Clip a mapped box to the unit square; None when too little of it stays visible."""
    x1, y1, x2, y2 = box.corners
    cx1, cy1, cx2, cy2 = max(x1, 0.0), max(y1, 0.0), min(x2, 1.0), min(y2, 1.0)
    if cx2 <= cx1 or cy2 <= cy1:
        return None
    if (cx2 - cx1) * (cy2 - cy1) < MIN_VISIBLE_SHARE * box.area:
        return None
    if (cx1, cy1, cx2, cy2) == (x1, y1, x2, y2):
        return box
    return BoundingBox.from_corners(cx1, cy1, cx2, cy2)


@dataclass
class SimulatedPair:
    prev_frame: np.ndarray
    curr_frame: np.ndarray
    prev_gts: list
    curr_gts: list
    prev_view: CropView
    curr_view: CropView


def simulate_pair(image, gts, config, rng):
    """Make a t-1/t frame pair out of one image by two independent random crops."""
    image = np.asarray(image, dtype=np.uint8)
    frame_height, frame_width = image.shape
    views = [random_view(frame_width, frame_height, config.sim_crop_frac, rng)
             for _ in range(2)]
    frames, view_gts = [], []
    for view in views:
        frames.append(view.render(image))
        kept = []
        for gt in gts:
            box = _clip_to_view(view.apply(gt.box))
            if box is not None:
                kept.append(replace(gt, box=box))
        view_gts.append(kept)
    return SimulatedPair(frames[0], frames[1], view_gts[0], view_gts[1], views[0], views[1])
