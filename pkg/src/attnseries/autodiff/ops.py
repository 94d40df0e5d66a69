"""Neural-network primitives with hand-written backward rules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, DimensionError
from .tensor import Tensor, as_tensor, custom_op

ACTIVATIONS = ("identity", "tanh", "sigmoid", "relu", "tan")


def _sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(x, kind: str) -> Tensor:
    x = as_tensor(x)
    d = x.data
    if kind == "identity":
        return x
    if kind == "tanh":
        out = np.tanh(d)
        return custom_op(out, (x,), lambda g: (g * (1.0 - out * out),))
    if kind == "sigmoid":
        out = _sigmoid(d)
        return custom_op(out, (x,), lambda g: (g * out * (1.0 - out),))
    if kind == "relu":
        mask = d > 0
        return custom_op(np.where(mask, d, 0.0), (x,), lambda g: (g * mask,))
    if kind == "tan":
        out = np.tan(d)
        return custom_op(out, (x,), lambda g: (g * (1.0 + out * out),))
    raise ConfigurationError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def relu(x):
    return activation(x, "relu")


def tanh(x):
    return activation(x, "tanh")


def sigmoid(x):
    return activation(x, "sigmoid")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return custom_op(out, (x,), _bw)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def _bw(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return custom_op(out, (x,), _bw)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Standardise over the last axis, then scale by ``gain`` and shift by ``bias``."""
    if eps < 0:
        raise ConfigurationError("layer_norm eps must be non-negative")
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def _bw(g):
        lead = tuple(range(g.ndim - 1))
        dgain = np.sum(g * xhat, axis=lead) if gain.requires_grad else None
        dbias = np.sum(g, axis=lead) if bias.requires_grad else None
        dx = None
        if x.requires_grad:
            gh = g * gd
            dx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * np.mean(gh * xhat, axis=-1, keepdims=True))
        return dx, dgain, dbias

    return custom_op(xhat * gd + bias.data, (x, gain, bias), _bw)


@dataclass
class BNState:
    """Running statistics of a batch-normalisation layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    steps: int = 0

    @classmethod
    def fresh(cls, channels: int) -> "BNState":
        return cls(np.zeros(channels), np.ones(channels))


def _channel_mean(a2d):
    # BLAS column sums; numpy's axis-0 reduction is slow for few channels
    return np.ones(a2d.shape[0]) @ a2d / a2d.shape[0]


def batch_norm(x, gain, bias, state: BNState, mode: str = "train",
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel (last axis) normalisation over every other axis.

    In train mode batch statistics are used and the running statistics move by
    ``running = (1 - momentum) * running + momentum * batch``; the biased
    batch variance is used for both. Eval mode uses the running statistics.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data
    shape = d.shape
    ch = shape[-1]
    gd = gain.data
    if mode == "train":
        d2 = d.reshape(-1, ch)
        m = d2.shape[0]
        if m < 2:
            raise DimensionError("batch_norm in train mode needs at least two values per channel")
        mu = _channel_mean(d2)
        var = np.maximum(_channel_mean(d2 * d2) - mu * mu, 0.0)
        state.running_mean = (1.0 - momentum) * state.running_mean + momentum * mu
        state.running_var = (1.0 - momentum) * state.running_var + momentum * var
        state.steps += 1
        inv = 1.0 / np.sqrt(var + eps)
        scale = gd * inv
        out = d2 * scale
        out += bias.data - mu * scale

        def _bw(g):
            # everything below is affine in g and d, so each term is one pass
            g2 = g.reshape(-1, ch)
            mg = _channel_mean(g2)
            mgx = inv * (_channel_mean(g2 * d2) - mu * mg)
            dgain = mgx * m if gain.requires_grad else None
            dbias = mg * m if bias.requires_grad else None
            dx = None
            if x.requires_grad:
                b_coef = scale * inv * mgx
                dx = g2 * scale
                dx -= d2 * b_coef
                dx += b_coef * mu - scale * mg
                dx = dx.reshape(shape)
            return dx, dgain, dbias

        return custom_op(out.reshape(shape), (x, gain, bias), _bw)
    if mode != "eval":
        raise ConfigurationError(f"unknown mode {mode!r}")
    inv = 1.0 / np.sqrt(state.running_var + eps)
    xhat = (d - state.running_mean) * inv
    axes = tuple(range(d.ndim - 1))

    def _bw_eval(g):
        return (
            g * (gd * inv) if x.requires_grad else None,
            np.sum(g * xhat, axis=axes) if gain.requires_grad else None,
            np.sum(g, axis=axes) if bias.requires_grad else None,
        )

    return custom_op(xhat * gd + bias.data, (x, gain, bias), _bw_eval)


def conv1d(x, kernels, padding: str = "same") -> Tensor:
    """Cross-correlate ``x`` [..., T, D_in] with ``kernels`` [D_out, K, D_in] along time."""
    x, kernels = as_tensor(x), as_tensor(kernels)
    if kernels.ndim != 3:
        raise DimensionError(f"kernels must be [D_out, K, D_in], got {kernels.shape}")
    d_out, k, d_in = kernels.shape
    if x.shape[-1] != d_in:
        raise DimensionError(f"input channels {x.shape} do not match kernels {kernels.shape}")
    single = x.ndim == 2
    xd = x.data[None] if single else x.data
    n, t, _ = xd.shape
    if t < 1:
        raise DimensionError("conv1d needs at least one time step")
    if padding == "same":
        if k % 2 == 0:
            raise ConfigurationError(f"'same' padding needs an odd kernel size, got K={k}")
        pad = (k - 1) // 2
        xp = np.pad(xd, ((0, 0), (pad, pad), (0, 0)))
    elif padding == "valid":
        if k > t:
            raise DimensionError(f"kernel size {k} exceeds series length {t}")
        pad = 0
        xp = xd
    else:
        raise ConfigurationError(f"unknown padding mode {padding!r}")
    t_out = xp.shape[1] - k + 1
    # [N, T_out, D_in, K] -> [N*T_out, K*D_in]
    cols = sliding_window_view(xp, k, axis=1).transpose(0, 1, 3, 2).reshape(n * t_out, k * d_in)
    wmat = kernels.data.reshape(d_out, k * d_in)
    out = (cols @ wmat.T).reshape(n, t_out, d_out)
    if single:
        out = out[0]

    def _bw(g):
        g2 = g.reshape(n * t_out, d_out)
        dw = (g2.T @ cols).reshape(d_out, k, d_in) if kernels.requires_grad else None
        dx = None
        if x.requires_grad:
            # input gradient = full correlation of g with the time-flipped kernels
            gp = np.pad(g.reshape(n, t_out, d_out), ((0, 0), (k - 1, k - 1), (0, 0)))
            gcols = sliding_window_view(gp, k, axis=1).transpose(0, 1, 3, 2).reshape(-1, k * d_out)
            wflip = kernels.data[:, ::-1, :].transpose(1, 0, 2).reshape(k * d_out, d_in)
            dxp = (gcols @ wflip).reshape(n, t_out + k - 1, d_in)
            dx = dxp[:, pad:pad + t, :]
            if single:
                dx = dx[0]
        return dx, dw

    return custom_op(out, (x, kernels), _bw)


def global_max_time(x) -> Tensor:
    """Per-channel maximum over the time axis (second to last)."""
    x = as_tensor(x)
    if x.size == 0 or x.ndim < 2:
        raise DimensionError(f"global_max_time needs a non-empty [..., T, D] input, got {x.shape}")
    return x.max(axis=-2)


def avg_pool1d(x, window: int) -> Tensor:
    """Non-overlapping windowed mean over time; a trailing partial window
    is averaged over its actual length."""
    x = as_tensor(x)
    if x.size == 0 or x.ndim < 2:
        raise DimensionError(f"avg_pool1d needs a non-empty [..., T, D] input, got {x.shape}")
    t = x.shape[-2]
    if window < 1 or window > t:
        raise DimensionError(f"pooling window {window} must lie in [1, {t}]")
    n_win = -(-t // window)
    padded = n_win * window
    d = x.data
    if padded != t:
        widths = [(0, 0)] * d.ndim
        widths[-2] = (0, padded - t)
        d = np.pad(d, widths)
    counts = np.full(n_win, float(window))
    counts[-1] = t - (n_win - 1) * window
    lead = d.shape[:-2]
    ch = d.shape[-1]
    sums = d.reshape(*lead, n_win, window, ch).sum(axis=-2)
    out = sums / counts[:, None]

    def _bw(g):
        gw = (g / counts[:, None])[..., :, None, :]
        full = np.broadcast_to(gw, (*lead, n_win, window, ch)).reshape(*lead, padded, ch)
        return (full[..., :t, :],)

    return custom_op(out, (x,), _bw)


def pool(x, kind: str, window: int | None = None) -> Tensor:
    if kind == "global_max_time":
        return global_max_time(x)
    if kind == "avg1d":
        return avg_pool1d(x, window)
    raise ConfigurationError(f"unknown pooling kind {kind!r}")


def dropout(x, p: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``p`` and rescale survivors in train mode."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must lie in [0, 1), got {p}")
    x = as_tensor(x)
    if mode != "train" or p == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return custom_op(x.data * keep, (x,), lambda g: (g * keep,))
