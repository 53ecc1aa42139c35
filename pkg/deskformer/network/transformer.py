"""The tracking encoder-decoder.

A frame pair goes through (i) a linear patch embedding of both frames, (ii) an encoder over
the stacked previous/current tokens, (iii) a decoder over the joint set of track queries and
learned object queries, and (iv) class and box heads on the final query embeddings.

Prediction rows are ordered track slots first (in the order of the given track queries),
then the object query slots.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from deskformer.errors import ConfigurationError
from matching.boxes import BoundingBox
from network.layers import (
    ACTIVATIONS, BoxHead, DecoderLayer, EncoderLayer, Layer, Linear, sinusoidal_grid_encoding)
from numerics import tensor as tn
from numerics.tensor import Tensor, parameter

logger = logging.getLogger(__name__)


class QueryError(ValueError):
    """Malformed query set or out-of-range query selection."""


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_object_queries: int = 20
    patch_size: int = 8
    n_classes: int = 1
    ffn_dim: int = 128
    activation: str = 'relu'
    aux_loss: bool = False
    init_seed: int = 0

    def __post_init__(self):
        for name in ('d_model', 'n_heads', 'n_dec_layers', 'n_object_queries', 'patch_size',
                     'n_classes', 'ffn_dim'):
            if getattr(self, name) < 1:
                raise ConfigurationError("{} must be at least 1".format(name))
        if self.n_enc_layers < 0:
            raise ConfigurationError("n_enc_layers can not be negative")
        if self.d_model % self.n_heads:
            raise ConfigurationError("d_model ({}) must be divisible by n_heads ({})".format(
                self.d_model, self.n_heads))
        if self.d_model % 4:
            raise ConfigurationError("d_model must be a multiple of 4 for the 2-D encoding")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError("Unknown activation {!r}".format(self.activation))

    @property
    def background_class(self):
        return self.n_classes


@dataclass
class QuerySet:
    """Decoder input: track queries (carried from the previous frame) and object queries.

    A fragment (as produced by `spawn_track_queries`) has no object queries.
    """
    object_queries: Tensor = None
    track_queries: Tensor = None
    track_identities: list = field(default_factory=list)

    def __post_init__(self):
        if self.track_queries is None:
            width = 0 if self.object_queries is None else self.object_queries.shape[1]
            self.track_queries = Tensor(np.zeros((0, width)))
        if len(self.track_identities) != self.track_queries.shape[0]:
            raise QueryError("{} track queries but {} identities".format(
                self.track_queries.shape[0], len(self.track_identities)))
        real = [i for i in self.track_identities if i is not None]
        if len(real) != len(set(real)):
            raise QueryError("Track identities must be unique: {}".format(self.track_identities))

    @property
    def n_track(self):
        return len(self.track_identities)

    @property
    def n_object(self):
        return 0 if self.object_queries is None else self.object_queries.shape[0]

    def __len__(self):
        return self.n_track + self.n_object


@dataclass
class FramePrediction:
    """Per-row outputs; the last column of `class_probs` is the background class."""
    embeddings: Tensor
    boxes: Tensor
    class_probs: Tensor
    aux: list = field(default_factory=list)

    def __len__(self):
        return self.boxes.shape[0]

    def scores(self):
        """Best foreground probability of every row."""
        return self.class_probs.data[:, :-1].max(axis=1)

    def bounding_boxes(self):
        return [BoundingBox.from_array(row) for row in self.boxes.data]


def frame_patches(frame, patch_size):
    """Cut a (H, W) frame into flattened patches, row-major over the patch grid."""
    pixels = np.asarray(frame)
    if pixels.ndim != 2:
        raise ConfigurationError("Frames must be 2-D grayscale, got shape {}".format(
            pixels.shape))
    scale = 255.0 if np.issubdtype(pixels.dtype, np.integer) else 1.0
    pixels = pixels.astype(np.float64) / scale
    height, width = pixels.shape
    if height % patch_size or width % patch_size:
        raise ConfigurationError("Frame {}x{} not divisible by patch size {}".format(
            width, height, patch_size))
    rows, cols = height // patch_size, width // patch_size
    patches = pixels.reshape(rows, patch_size, cols, patch_size).transpose(0, 2, 1, 3)
    return patches.reshape(rows * cols, patch_size * patch_size), (rows, cols)


class TrackingTransformer(Layer):

    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(config.init_seed)
        d_model = config.d_model
        self.patch_embedding = Linear(config.patch_size ** 2, d_model, rng)
        # row 0: previous frame, row 1: current frame
        self.temporal_embedding = parameter(rng.normal(0, 0.1, size=(2, d_model)))
        self.encoder_layers = [EncoderLayer(config, rng) for _ in range(config.n_enc_layers)]
        self.decoder_layers = [DecoderLayer(config, rng) for _ in range(config.n_dec_layers)]
        self.object_queries = parameter(rng.normal(0, 1, size=(config.n_object_queries, d_model)))
        self.class_head = Linear(d_model, config.n_classes + 1, rng)
        self.box_head = BoxHead(d_model, config.activation, rng)

    def encode(self, prev_frame, curr_frame):
        """Encode the stacked previous and current frame into memory tokens."""
        prev_patches, grid = frame_patches(prev_frame, self.config.patch_size)
        curr_patches, curr_grid = frame_patches(curr_frame, self.config.patch_size)
        if grid != curr_grid:
            raise ConfigurationError("Frame pair with different sizes")
        spatial = sinusoidal_grid_encoding(grid[0], grid[1], self.config.d_model)

        blocks = []
        for slot, patches in enumerate((prev_patches, curr_patches)):
            tokens = self.patch_embedding(Tensor(patches)) + spatial
            blocks.append(tokens + self.temporal_embedding[slot])
        memory = tn.concat(blocks, axis=0)
        for layer in self.encoder_layers:
            memory = layer(memory)
        return memory

    def query_set(self, tracks=None):
        """Join a track query fragment (or nothing) with the learned object queries."""
        if tracks is None:
            return QuerySet(object_queries=self.object_queries)
        return QuerySet(
            object_queries=self.object_queries, track_queries=tracks.track_queries,
            track_identities=list(tracks.track_identities))

    def _heads(self, embeddings):
        class_probs = tn.softmax(self.class_head(embeddings), axis=1)
        return FramePrediction(
            embeddings=embeddings, boxes=self.box_head(embeddings), class_probs=class_probs)

    def decode(self, memory, queries):
        """Decode the joint query set against the memory."""
        if queries.object_queries is None:
            raise QueryError("Decoding needs the object queries")
        n_object, width = queries.object_queries.shape
        if width != self.config.d_model or queries.track_queries.shape[1] != width:
            raise QueryError("Query width does not match d_model={}".format(
                self.config.d_model))

        # object slots start from zero content; track slots carry their embedding
        content = tn.concat([queries.track_queries, Tensor(np.zeros((n_object, width)))])
        position = tn.concat([queries.track_queries, queries.object_queries])

        intermediate = []
        target = content
        for layer in self.decoder_layers:
            target = layer(target, position, memory)
            intermediate.append(target)

        prediction = self._heads(target)
        if self.config.aux_loss:
            prediction.aux = [self._heads(hidden) for hidden in intermediate[:-1]]
        return prediction

    def predict(self, prev_frame, curr_frame, queries):
        return self.decode(self.encode(prev_frame, curr_frame), queries)


def spawn_track_queries(prediction, accepted, identities):
    """Turn the last-layer embeddings at `accepted` rows into next-frame track queries."""
    accepted = [int(row) for row in accepted]
    identities = list(identities)
    if len(accepted) != len(identities):
        raise QueryError("{} accepted rows but {} identities".format(
            len(accepted), len(identities)))
    n_rows = len(prediction)
    for row in accepted:
        if not 0 <= row < n_rows:
            raise QueryError("Row {} out of range for {} predictions".format(row, n_rows))
    width = prediction.embeddings.shape[1]
    if accepted:
        queries = prediction.embeddings[np.array(accepted)]
    else:
        queries = Tensor(np.zeros((0, width)))
    return QuerySet(track_queries=queries, track_identities=identities)
