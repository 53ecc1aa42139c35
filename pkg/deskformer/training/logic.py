"""Two-step training on frame pairs.

Step (i) detects the objects of frame t-1 with the object queries alone; its matched rows
become the track queries of frame t (after the track augmentations). Step (ii) decodes the
track queries plus the object queries on frame t and is supervised with the identity
constrained assignment. The track queries keep their graph, so both steps get gradients
from the frame t loss.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from deskformer.errors import ConfigurationError
from deskformer.rng import generator
from matching.costs import CostWeights
from matching.logic import constrained_assignment
from network.transformer import spawn_track_queries
from numerics.tensor import NonFiniteError, zero_grad
from training import augment
from training.losses import LossBreakdown, LossConfig, set_loss

logger = logging.getLogger(__name__)

LOG_COLUMNS = ('step', 'total', 'cls', 'l1', 'giou')


class DivergenceError(ValueError):
    """The training loss stopped being finite."""


@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 2000
    lr: float = 5e-2
    momentum: float = 0.9
    clip_max_norm: float = 1.0
    lr_drop: int = 0
    lr_gamma: float = 0.1
    log_every: int = 50
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigurationError("steps can not be negative")
        if self.lr < 0:
            raise ConfigurationError("lr can not be negative")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must be in [0, 1)")
        if self.clip_max_norm < 0:
            raise ConfigurationError("clip_max_norm can not be negative (0 disables clipping)")
        if self.lr_drop < 0 or not 0 < self.lr_gamma <= 1:
            raise ConfigurationError("Need lr_drop >= 0 and 0 < lr_gamma <= 1")
        if self.log_every < 1 or self.checkpoint_every < 0:
            raise ConfigurationError("log_every must be positive, checkpoint_every >= 0")


def supervised_loss(prediction, gts, track_identities, weights, loss_config):
    """Set loss of the final decoder output plus, when present, every intermediate output.

    Each output gets its own assignment and, with `normalize_per_object`, its own
    normalization; the assignment of the final output is returned too.
    """
    final_assignment = None
    total = LossBreakdown.zero()
    for output in [prediction] + list(prediction.aux):
        assignment = constrained_assignment(
            gts, track_identities, output.class_probs.data, output.boxes.data, weights)
        breakdown = set_loss(output, gts, assignment, weights, loss_config.background_weight)
        if loss_config.normalize_per_object:
            breakdown = breakdown.normalized(loss_config.background_weight)
        total = total + breakdown
        if final_assignment is None:
            final_assignment = assignment
    return total, final_assignment


def track_candidates(prediction, gts, assignment):
    """Matched rows (carrying their gt identity) and background rows of a step (i) output."""
    boxes = prediction.boxes.data
    matched = [augment.TrackCandidate(pair.prediction_index, gts[pair.gt_index].identity,
                                      boxes[pair.prediction_index].copy())
               for pair in assignment.pairs]
    background = [augment.TrackCandidate(row, None, boxes[row].copy())
                  for row in sorted(assignment.background_predictions)]
    return matched, background


def two_step_loss(model, prev_frame, curr_frame, prev_gts, curr_gts, augment_config, rng,
                  weights=CostWeights(), loss_config=LossConfig()):
    """Loss of one training sample: detection on frame t-1, then tracking on frame t."""
    prev_gts = augment.jitter_gt(prev_gts, augment_config.jitter_frac, rng)

    # (i) object queries only; the frame t-1 is its own predecessor
    detection = model.predict(prev_frame, prev_frame, model.query_set())
    prev_loss, prev_assignment = supervised_loss(detection, prev_gts, [], weights, loss_config)

    matched, background = track_candidates(detection, prev_gts, prev_assignment)
    kept = augment.drop_false_negatives(matched, augment_config, rng)
    candidates = augment.spawn_false_positives(kept, background, augment_config, rng)
    tracks = spawn_track_queries(
        detection, [c.row for c in candidates], [c.identity for c in candidates])

    # (ii) track queries plus object queries on frame t
    tracking = model.predict(prev_frame, curr_frame, model.query_set(tracks))
    curr_loss, _ = supervised_loss(
        tracking, curr_gts, tracks.track_identities, weights, loss_config)

    logger.debug(
        "Two-step sample: %d gt at t-1, %d track queries (%d false positives), %d gt at t",
        len(prev_gts), tracks.n_track, len(candidates) - len(kept), len(curr_gts))
    if loss_config.supervise_prev_frame:
        return prev_loss + curr_loss
    return curr_loss


def training_pair(sequences, augment_config, rng):
    """Draw (prev_frame, curr_frame, prev_gts, curr_gts) from the training sequences."""
    sequence = sequences[int(rng.integers(len(sequences)))]
    t = int(rng.integers(len(sequence)))
    if rng.random() < augment_config.sim_pair_prob and sequence.gt.frames[t]:
        pair = augment.simulate_pair(
            sequence.frames[t], sequence.gt.frames[t], augment_config, rng)
        return pair.prev_frame, pair.curr_frame, pair.prev_gts, pair.curr_gts
    prev = augment.sample_prev_frame(t, len(sequence), augment_config, rng)
    frames, gt = sequence.frames, sequence.gt.frames
    return frames[prev], frames[t], gt[prev], gt[t]


class SGDMomentum:
    """SGD with heavy-ball momentum, global gradient-norm clipping and step lr drops."""

    def __init__(self, named_parameters, config, buffers=None):
        self.parameters = list(named_parameters)
        self.config = config
        buffers = buffers or {}
        self.buffers = {
            name: np.array(buffers[name], dtype=np.float64) if name in buffers
            else np.zeros_like(tensor.data)
            for name, tensor in self.parameters}

    def learning_rate(self, step):
        if not self.config.lr_drop:
            return self.config.lr
        return self.config.lr * self.config.lr_gamma ** (step // self.config.lr_drop)

    def zero_grad(self):
        zero_grad(tensor for _, tensor in self.parameters)

    def step(self, step):
        """Apply the gradients accumulated on the parameters; returns the gradient norm."""
        grads = [np.zeros_like(t.data) if t.grad is None else t.grad for _, t in self.parameters]
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
        scale = 1.0
        if self.config.clip_max_norm and norm > self.config.clip_max_norm:
            scale = self.config.clip_max_norm / (norm + 1e-6)
        lr = self.learning_rate(step)
        for (name, tensor), grad in zip(self.parameters, grads):
            buffer = self.buffers[name]
            buffer *= self.config.momentum
            buffer += grad * scale
            tensor.data -= lr * buffer
        return norm


def format_log_row(step, values):
    return '{},{}'.format(step, ','.join('{:.6f}'.format(v) for v in values))


def read_training_log(source):
    """Parse a loss log into (step, total, cls, l1, giou) tuples; comments are skipped."""
    if hasattr(source, 'read'):
        lines = source.read().splitlines()
    else:
        with open(source, 'rt', encoding='ascii') as fh:
            lines = fh.read().splitlines()
    rows = []
    for line in lines:
        if not line.strip() or line.startswith('#') or line.startswith(LOG_COLUMNS[0]):
            continue
        step, *values = line.split(',')
        rows.append((int(step),) + tuple(float(v) for v in values))
    return rows


class Trainer:
    """Runs `TrainingConfig.steps` two-step updates over a list of sequences."""

    def __init__(self, model, sequences, augment_config, training_config,
                 weights=CostWeights(), loss_config=LossConfig(), start_step=0, momentum=None):
        if not sequences:
            raise ConfigurationError("Training needs at least one sequence")
        if any(len(sequence) < 2 for sequence in sequences):
            raise ConfigurationError("Training sequences need at least 2 frames")
        capacity = model.config.n_object_queries
        busiest = max(len(objects) for sequence in sequences for objects in sequence.gt.frames)
        if busiest > capacity:
            raise ConfigurationError(
                "A training frame holds {} ground-truth objects but the model has only {} "
                "object queries (n_object_queries)".format(busiest, capacity))
        self.model = model
        self.sequences = sequences
        self.augment_config = augment_config
        self.config = training_config
        self.weights = weights
        self.loss_config = loss_config
        self.step_count = start_step
        self.optimizer = SGDMomentum(model.named_parameters(), training_config, momentum)

    def train_step(self):
        """One update; returns (total, cls, l1, giou) of the sample before the update."""
        rng = generator(self.augment_config.seed, self.step_count)
        prev_frame, curr_frame, prev_gts, curr_gts = training_pair(
            self.sequences, self.augment_config, rng)
        self.optimizer.zero_grad()
        try:
            breakdown = two_step_loss(
                self.model, prev_frame, curr_frame, prev_gts, curr_gts, self.augment_config,
                rng, self.weights, self.loss_config)
            breakdown.total.backward()
            self.optimizer.step(self.step_count)
        except NonFiniteError as err:
            logger.error("Non-finite value at step %d: %s", self.step_count, err)
            raise DivergenceError("Training diverged at step {}: {}".format(
                self.step_count, err))
        values = breakdown.values()
        if not all(math.isfinite(v) for v in values):
            logger.error("Non-finite loss at step %d: %s", self.step_count, values)
            raise DivergenceError("Training diverged at step {}: loss {}".format(
                self.step_count, values))
        self.step_count += 1
        return values

    def run(self, log_stream, on_checkpoint=None):
        """Train until `steps` updates are done, appending one log row per step."""
        while self.step_count < self.config.steps:
            step = self.step_count
            values = self.train_step()
            log_stream.write(format_log_row(step, values) + '\n')
            logger.debug("step %d: %s", step, values)
            if step % self.config.log_every == 0:
                logger.info("step %d/%d total %.4f", step, self.config.steps, values[0])
            every = self.config.checkpoint_every
            if on_checkpoint is not None and every and self.step_count % every == 0:
                on_checkpoint(self)
        return self.step_count
