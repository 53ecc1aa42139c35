"""Central-difference oracle for the analytic gradients."""

import numpy as np

from numerics.tensor import backward


def finite_difference_check(f, x, h=1e-5, indices=None):
    """Compare backward() against central differences of the scalar function f at x.

    Returns the maximum over the checked coordinates of
    |analytic - numeric| / max(1, |numeric|). `indices` restricts the check to some flat
    coordinates of x (useful for big weight matrices); x is restored afterwards.
    """
    x.grad = None
    backward(f(x))
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)

    worst = 0.0
    for index in indices:
        original = flat[index]
        flat[index] = original + h
        plus = f(x).item()
        flat[index] = original - h
        minus = f(x).item()
        flat[index] = original

        numeric = (plus - minus) / (2 * h)
        error = abs(analytic.reshape(-1)[index] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, error)
    return worst
