"""Building blocks of the encoder-decoder: linear maps, norms, attention, feed-forward."""

import math

import numpy as np

from numerics import tensor as tn
from numerics.tensor import parameter

ACTIVATIONS = {
    'relu': tn.relu,
    'gelu': tn.gelu,
}


class Layer:
    """Anything holding trainable tensors, directly or through sub-layers."""

    def named_parameters(self, prefix=''):
        """Yield (dotted name, tensor) for every trainable tensor, in definition order."""
        for name, value in vars(self).items():
            if isinstance(value, tn.Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Layer):
                yield from value.named_parameters(prefix + name + '.')
            elif isinstance(value, list):
                for position, item in enumerate(value):
                    if isinstance(item, Layer):
                        yield from item.named_parameters(
                            '{}{}.{}.'.format(prefix, name, position))

    def parameters(self):
        return [tensor for _, tensor in self.named_parameters()]


class Linear(Layer):

    def __init__(self, n_in, n_out, rng):
        bound = 1 / math.sqrt(n_in)
        self.weight = parameter(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.bias = parameter(np.zeros(n_out))

    def __call__(self, x):
        return tn.matmul(x, self.weight) + self.bias


class LayerNorm(Layer):

    def __init__(self, width):
        self.gain = parameter(np.ones(width))
        self.bias = parameter(np.zeros(width))

    def __call__(self, x):
        return tn.layer_norm(x, self.gain, self.bias)


class FeedForward(Layer):

    def __init__(self, d_model, ffn_dim, activation, rng):
        self.expand = Linear(d_model, ffn_dim, rng)
        self.contract = Linear(ffn_dim, d_model, rng)
        self.activation = activation

    def __call__(self, x):
        return self.contract(ACTIVATIONS[self.activation](self.expand(x)))


class MultiHeadAttention(Layer):
    """Scaled dot-product attention split over `n_heads` column blocks."""

    def __init__(self, d_model, n_heads, rng):
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.query = Linear(d_model, d_model, rng)
        self.key = Linear(d_model, d_model, rng)
        self.value = Linear(d_model, d_model, rng)
        self.output = Linear(d_model, d_model, rng)

    def __call__(self, query, key, value):
        q, k, v = self.query(query), self.key(key), self.value(value)
        scale = 1 / math.sqrt(self.head_dim)
        heads = []
        for head in range(self.n_heads):
            cols = (slice(None), slice(head * self.head_dim, (head + 1) * self.head_dim))
            weights = tn.softmax(tn.matmul(q[cols], k[cols].T) * scale, axis=1)
            heads.append(tn.matmul(weights, v[cols]))
        return self.output(tn.concat(heads, axis=1))


class EncoderLayer(Layer):

    def __init__(self, config, rng):
        self.attention = MultiHeadAttention(config.d_model, config.n_heads, rng)
        self.norm_attention = LayerNorm(config.d_model)
        self.feed_forward = FeedForward(config.d_model, config.ffn_dim, config.activation, rng)
        self.norm_feed_forward = LayerNorm(config.d_model)

    def __call__(self, x):
        x = self.norm_attention(x + self.attention(x, x, x))
        return self.norm_feed_forward(x + self.feed_forward(x))


class DecoderLayer(Layer):
    """Self-attention over all queries, cross-attention to the memory, feed-forward.

    `position` is added to the keys and queries of the self-attention and to the queries of
    the cross-attention at every layer.
    """

    def __init__(self, config, rng):
        self.self_attention = MultiHeadAttention(config.d_model, config.n_heads, rng)
        self.norm_self = LayerNorm(config.d_model)
        self.cross_attention = MultiHeadAttention(config.d_model, config.n_heads, rng)
        self.norm_cross = LayerNorm(config.d_model)
        self.feed_forward = FeedForward(config.d_model, config.ffn_dim, config.activation, rng)
        self.norm_feed_forward = LayerNorm(config.d_model)

    def __call__(self, target, position, memory):
        positioned = target + position
        target = self.norm_self(target + self.self_attention(positioned, positioned, target))
        target = self.norm_cross(
            target + self.cross_attention(target + position, memory, memory))
        return self.norm_feed_forward(target + self.feed_forward(target))


class BoxHead(Layer):
    """Three-layer perceptron ending in four sigmoid-bounded box values."""

    def __init__(self, d_model, activation, rng):
        self.layers = [
            Linear(d_model, d_model, rng), Linear(d_model, d_model, rng), Linear(d_model, 4, rng)]
        self.activation = activation

    def __call__(self, x):
        act = ACTIVATIONS[self.activation]
        x = act(self.layers[0](x))
        x = act(self.layers[1](x))
        return tn.sigmoid(self.layers[2](x))


def sinusoidal_grid_encoding(rows, cols, d_model):
    """Fixed 2-D sine/cosine encoding: the first half of the width encodes the row, the rest
    the column."""
    half = d_model // 2
    freqs = 1.0 / (10000 ** (np.arange(0, half, 2) / half))

    def encode(positions):
        angles = positions[:, None] * freqs[None, :]
        out = np.zeros((len(positions), half))
        out[:, 0::2] = np.sin(angles)
        out[:, 1::2] = np.cos(angles)
        return out

    grid_y, grid_x = np.meshgrid(np.arange(rows), np.arange(cols), indexing='ij')
    return np.concatenate(
        [encode(grid_y.reshape(-1).astype(float)), encode(grid_x.reshape(-1).astype(float))],
        axis=1)
