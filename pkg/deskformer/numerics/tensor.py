"""Dense float64 tensors with reverse-mode gradient propagation.

A Tensor wraps a contiguous numpy array. Operations on tensors that require gradients record
their parents and a closure mapping the output gradient to one gradient per parent; calling
`backward` on a scalar walks that graph in reverse topological order.

A graph must be built and differentiated in a single thread; tensors themselves are plain
values and can be handed between threads.
"""

import numpy as np

LAYER_NORM_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)


class ShapeError(ValueError):
    """The operands of an operation have incompatible shapes."""


class NonFiniteError(ValueError):
    """A NaN or infinite value reached a tensor."""


class ContractError(ValueError):
    """An operation was called outside its preconditions."""


class Tensor:
    """A dense array of 64-bit floats, optionally carrying a gradient."""

    # numpy operands defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        data = np.array(data, dtype=np.float64)
        _check_finite(data, 'tensor')
        self.data = data
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward_fn = None
        self._op = 'leaf'

    @classmethod
    def _from_op(cls, data, parents, backward_fn, op):
        """Build the result of an operation, recording the graph only when needed."""
        data = np.ascontiguousarray(data, dtype=np.float64)
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward_fn = backward_fn
        else:
            out._parents = ()
            out._backward_fn = None
        return out

    def __repr__(self):
        return "Tensor(shape={}, op={}, requires_grad={})".format(
            self.shape, self._op, self.requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        """Flat view over the stored values."""
        return self.data.reshape(-1)

    @property
    def T(self):
        return transpose(self)

    def item(self):
        if self.data.size != 1:
            raise ContractError("item() needs a single-element tensor, got {}".format(self.shape))
        return float(self.data.reshape(-1)[0])

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def abs(self):
        return absolute(self)


def as_tensor(value):
    """Wrap constants so operations can mix tensors and plain numbers/arrays."""
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(data):
    """Create a trainable leaf tensor."""
    return Tensor(data, requires_grad=True)


def zero_grad(tensors):
    for tensor in tensors:
        tensor.grad = None


def _check_finite(data, op):
    if not np.isfinite(data).all():
        raise NonFiniteError("Non-finite value produced by {}".format(op))


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the operand shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError("{}: shapes {} and {} do not broadcast".format(op, a.shape, b.shape))


def _topological_order(root):
    """Return the graph nodes reachable from root, parents before children."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss):
    """Propagate d(loss)/d(node) into the `grad` of every participating tensor.

    Gradients accumulate: calling this twice without resetting doubles the leaf gradients.
    """
    if loss.data.size != 1:
        raise ContractError("backward needs a scalar loss, got shape {}".format(loss.shape))

    upstream = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        grad = upstream.pop(id(node), None)
        if grad is None:
            continue
        node.grad = grad.copy() if node.grad is None else node.grad + grad
        if node._backward_fn is None:
            continue
        for parent, parent_grad in zip(node._parents, node._backward_fn(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in upstream:
                upstream[key] = upstream[key] + parent_grad
            else:
                upstream[key] = parent_grad


# -- element-wise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, 'add')

    def backward_fn(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)
    return Tensor._from_op(a.data + b.data, (a, b), backward_fn, 'add')


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, 'mul')

    def backward_fn(grad):
        return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)
    return Tensor._from_op(a.data * b.data, (a, b), backward_fn, 'mul')


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, 'div')
    if (b.data == 0).any():
        raise NonFiniteError("Division by zero")
    out = a.data / b.data

    def backward_fn(grad):
        return (
            _unbroadcast(grad / b.data, a.shape),
            _unbroadcast(-grad * out / b.data, b.shape))
    return Tensor._from_op(out, (a, b), backward_fn, 'div')


def neg(a):
    a = as_tensor(a)
    return Tensor._from_op(-a.data, (a,), lambda grad: (-grad,), 'neg')


def power(a, exponent):
    a = as_tensor(a)
    exponent = float(exponent)
    with np.errstate(all='ignore'):
        out = a.data ** exponent

    def backward_fn(grad):
        return (grad * exponent * a.data ** (exponent - 1),)
    return Tensor._from_op(out, (a,), backward_fn, 'power')


def exp(a):
    a = as_tensor(a)
    with np.errstate(over='ignore'):
        out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda grad: (grad * out,), 'exp')


def log(a):
    a = as_tensor(a)
    with np.errstate(divide='ignore', invalid='ignore'):
        out = np.log(a.data)
    return Tensor._from_op(out, (a,), lambda grad: (grad / a.data,), 'log')


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._from_op(out, (a,), lambda grad: (grad * out * (1.0 - out),), 'sigmoid')


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor._from_op(out, (a,), lambda grad: (grad * (1.0 - out * out),), 'tanh')


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._from_op(a.data * mask, (a,), lambda grad: (grad * mask,), 'relu')


def gelu(a):
    """GELU in its tanh form; smooth everywhere, unlike relu."""
    a = as_tensor(a)
    x = a.data
    inner = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    out = 0.5 * x * (1.0 + inner)

    def backward_fn(grad):
        slope = 0.5 * (1.0 + inner) + 0.5 * x * (1.0 - inner ** 2) * _GELU_C * (
            1.0 + 3 * 0.044715 * x ** 2)
        return (grad * slope,)
    return Tensor._from_op(out, (a,), backward_fn, 'gelu')


def absolute(a):
    a = as_tensor(a)
    sign = np.sign(a.data)
    return Tensor._from_op(np.abs(a.data), (a,), lambda grad: (grad * sign,), 'abs')


def maximum(a, b):
    """Element-wise maximum; ties send the gradient to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, 'maximum')
    first = a.data >= b.data

    def backward_fn(grad):
        return _unbroadcast(grad * first, a.shape), _unbroadcast(grad * ~first, b.shape)
    return Tensor._from_op(np.where(first, a.data, b.data), (a, b), backward_fn, 'maximum')


def minimum(a, b):
    """Element-wise minimum; ties send the gradient to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, 'minimum')
    first = a.data <= b.data

    def backward_fn(grad):
        return _unbroadcast(grad * first, a.shape), _unbroadcast(grad * ~first, b.shape)
    return Tensor._from_op(np.where(first, a.data, b.data), (a, b), backward_fn, 'minimum')


def clamp_min(a, floor):
    """Clamp from below; clamped entries get no gradient."""
    a = as_tensor(a)
    passed = a.data >= floor
    out = np.where(passed, a.data, floor)
    return Tensor._from_op(out, (a,), lambda grad: (grad * passed,), 'clamp_min')


# -- reductions and shape plumbing

def tensor_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def backward_fn(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, a.shape).copy(),)
    return Tensor._from_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward_fn, 'sum')


def tensor_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / max(count, 1))


def transpose(a):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose needs a matrix, got shape {}".format(a.shape))
    return Tensor._from_op(a.data.T, (a,), lambda grad: (grad.T,), 'transpose')


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("cannot reshape {} into {}".format(a.shape, shape))
    return Tensor._from_op(out, (a,), lambda grad: (grad.reshape(a.shape),), 'reshape')


def take(a, index):
    """Basic or fancy indexing; repeated indices accumulate their gradients."""
    a = as_tensor(a)
    try:
        out = a.data[index]
    except IndexError as err:
        raise ShapeError("index out of range for shape {}: {}".format(a.shape, err))

    def backward_fn(grad):
        full = np.zeros_like(a.data)
        np.add.at(full, index, grad)
        return (full,)
    return Tensor._from_op(out, (a,), backward_fn, 'take')


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as err:
        raise ShapeError("concat: {}".format(err))
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward_fn(grad):
        return tuple(
            np.take(grad, np.arange(start, stop), axis=axis)
            for start, stop in zip(bounds[:-1], bounds[1:]))
    return Tensor._from_op(out, tuple(tensors), backward_fn, 'concat')


# -- the model primitives

def matmul(a, b):
    """Matrix product; backward gives dA = dC·Bᵀ and dB = Aᵀ·dC."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul: shapes {} and {} do not chain".format(a.shape, b.shape))

    def backward_fn(grad):
        return grad @ b.data.T, a.data.T @ grad
    return Tensor._from_op(a.data @ b.data, (a, b), backward_fn, 'matmul')


def softmax(a, axis=-1):
    """Normalized exponentials along axis, stabilized by subtracting the maximum."""
    a = as_tensor(a)
    if a.data.ndim == 0 or not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError("softmax: axis {} invalid for shape {}".format(axis, a.shape))
    shifted = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward_fn(grad):
        return (out * (grad - (grad * out).sum(axis=axis, keepdims=True)),)
    return Tensor._from_op(out, (a,), backward_fn, 'softmax')


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    """Normalize each row over the last axis to zero mean and unit variance, then scale/shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    width = x.shape[-1] if x.data.ndim else None
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError("layer_norm: gain {} / bias {} do not match rows of {}".format(
            gain.shape, bias.shape, x.shape))

    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    std = np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    normalized = centered / std
    out = normalized * gain.data + bias.data

    def backward_fn(grad):
        grad_norm = grad * gain.data
        grad_x = (
            grad_norm
            - grad_norm.mean(axis=-1, keepdims=True)
            - normalized * (grad_norm * normalized).mean(axis=-1, keepdims=True)) / std
        flat_grad = grad.reshape(-1, width)
        grad_gain = (flat_grad * normalized.reshape(-1, width)).sum(axis=0)
        grad_bias = flat_grad.sum(axis=0)
        return grad_x, grad_gain, grad_bias
    return Tensor._from_op(out, (x, gain, bias), backward_fn, 'layer_norm')
