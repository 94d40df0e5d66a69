"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

from attnseries.autodiff import Tape, Tensor, backward


def relative_error(analytic, numeric, floor=1e-8):
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def numeric_partial(loss_fn, array, index, h=1e-6):
    """d loss / d array[index] by central differences; ``loss_fn`` reads ``array`` in place."""
    old = array[index]
    array[index] = old + h
    up = loss_fn()
    array[index] = old - h
    down = loss_fn()
    array[index] = old
    return (up - down) / (2 * h)


def check_gradients(build_loss, tensors, n_coords=20, h=1e-6, rng=None):
    """Compare tape gradients with finite differences on random coordinates.

    ``build_loss()`` must run a forward pass over ``tensors`` (which require
    grad) and return a scalar Tensor. Returns the worst relative error.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = build_loss()
    backward(loss, tape)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    def value():
        return float(build_loss().data)

    worst = 0.0
    sizes = np.array([t.size for t in tensors], dtype=float)
    for _ in range(n_coords):
        k = int(rng.choice(len(tensors), p=sizes / sizes.sum()))
        flat = int(rng.integers(tensors[k].size))
        index = np.unravel_index(flat, tensors[k].shape)
        num = numeric_partial(value, tensors[k].data, index, h)
        err = float(relative_error(analytic[k][index], num))
        worst = max(worst, err)
    return worst


def weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar probe sum(out * w) with fixed random weights to avoid cancellation."""
    return (out * Tensor(weights)).sum()
