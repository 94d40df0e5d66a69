"""Temporal feature-extraction layers built on the autodiff core.

Every layer accepts a single series ``[T, D]`` or a batch ``[N, T, D]``.
Affine weights are drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases
start at zero except the LSTM forget gate, which starts at one. ``Dense(zero=True)``
starts from zero weights; models use it for their classifier heads.
"""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from .autodiff import (
    BNState,
    Tensor,
    activation,
    batch_norm,
    concat,
    conv1d,
    dropout,
    getitem,
    gru_sequence,
    layer_norm,
    lstm_sequence,
    matmul,
    reshape,
    softmax,
    transpose,
)
from .errors import ConfigurationError, DimensionError


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _batched(x: Tensor):
    """Lift a single series to a batch of one; returns (batch, was_single)."""
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise DimensionError(f"expected [T, D] or [N, T, D], got {x.shape}")
    return x, False


class Module:
    """Parameter container; parameters and buffers are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, BNState]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, BNState):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_buffers(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Dense(Module):
    """``h_t = act(W^T x_t + b)`` applied independently at every time step."""

    def __init__(self, d_in: int, d_out: int, act: str = "identity", bias: bool = True,
                 rng: Optional[np.random.Generator] = None, zero: bool = False):
        rng = np.random.default_rng() if rng is None else rng
        self.act = act
        w = np.zeros((d_in, d_out)) if zero else _uniform(rng, d_in, (d_in, d_out))
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return dense_forward(self, x)


def dense_forward(layer: Dense, x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    d_in = layer.weight.shape[0]
    if x.shape[-1] != d_in:
        raise DimensionError(f"dense layer expects {d_in} input features, got {x.shape}")
    single = x.ndim == 1
    if single:
        x = reshape(x, (1, d_in))
    h = matmul(x, layer.weight)
    if layer.bias is not None:
        h = h + layer.bias
    h = activation(h, layer.act)
    return reshape(h, h.shape[1:]) if single else h


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x):
        return layer_norm(x, self.gain, self.bias, self.eps)


class BatchNorm(Module):
    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.momentum = momentum
        self.eps = eps
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.state = BNState.fresh(dim)

    def __call__(self, x, mode: str):
        return batch_norm(x, self.gain, self.bias, self.state, mode, self.momentum, self.eps)


class Conv1d(Module):
    """Bias-free 1D convolution with ``same`` padding (always followed by batch norm)."""

    def __init__(self, d_in: int, d_out: int, kernel_size: int, rng=None):
        if kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel size must be odd, got {kernel_size}")
        rng = np.random.default_rng() if rng is None else rng
        self.kernels = Tensor(_uniform(rng, kernel_size * d_in, (d_out, kernel_size, d_in)),
                              requires_grad=True)

    def __call__(self, x):
        return conv1d(x, self.kernels, "same")


# -- recurrence ------------------------------------------------------------------

def lstm_step(weights, x_t, h_prev, c_prev):
    """One LSTM update from primitive ops; ``weights`` is (W_x, W_h, bias).

    Returns ``(h_t, c_t)``. Inputs may be vectors or ``[N, .]`` batches.
    """
    w_x, w_h, bias = weights
    x_t, h_prev, c_prev = (a if isinstance(a, Tensor) else Tensor(a) for a in (x_t, h_prev, c_prev))
    hd = w_h.shape[0]
    if x_t.shape[-1] != w_x.shape[0] or h_prev.shape[-1] != hd or c_prev.shape[-1] != hd:
        raise DimensionError(
            f"lstm_step got x {x_t.shape}, h {h_prev.shape}, c {c_prev.shape} for weights "
            f"{w_x.shape}, {w_h.shape}")
    single = x_t.ndim == 1
    if single:
        x_t, h_prev, c_prev = (reshape(a, (1, a.shape[0])) for a in (x_t, h_prev, c_prev))
    z = matmul(x_t, w_x) + matmul(h_prev, w_h) + bias
    f = activation(getitem(z, (slice(None), slice(0, hd))), "sigmoid")
    i = activation(getitem(z, (slice(None), slice(hd, 2 * hd))), "sigmoid")
    g = activation(getitem(z, (slice(None), slice(2 * hd, 3 * hd))), "tanh")
    o = activation(getitem(z, (slice(None), slice(3 * hd, 4 * hd))), "sigmoid")
    c = f * c_prev + i * g
    h = o * activation(c, "tanh")
    if single:
        h, c = reshape(h, (hd,)), reshape(c, (hd,))
    return h, c


class LSTMCell(Module):
    """Gate weights of one direction of one layer."""

    def __init__(self, d_in: int, hidden: int, rng):
        fan_in = d_in + hidden
        self.w_x = Tensor(_uniform(rng, fan_in, (d_in, 4 * hidden)), requires_grad=True)
        self.w_h = Tensor(_uniform(rng, fan_in, (hidden, 4 * hidden)), requires_grad=True)
        b = np.zeros(4 * hidden)
        b[:hidden] = 1.0
        self.bias = Tensor(b, requires_grad=True)

    @property
    def weights(self):
        return self.w_x, self.w_h, self.bias

    def sequence(self, x: Tensor, reverse: bool = False) -> Tensor:
        return lstm_sequence(x, self.w_x, self.w_h, self.bias, reverse)


class LSTMStack(Module):
    """Cascade of (optionally bidirectional) LSTM layers with inter-layer dropout."""

    def __init__(self, d_in: int, hidden: int, num_layers: int = 1, bidirectional: bool = True,
                 dropout: float = 0.0, rng=None):
        if num_layers < 1:
            raise ConfigurationError("LSTM stack needs at least one layer")
        if not 0.0 <= dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {dropout}")
        rng = np.random.default_rng() if rng is None else rng
        self.hidden = hidden
        self.bidirectional = bidirectional
        self.dropout = dropout
        width = 2 * hidden if bidirectional else hidden
        self.forward_cells = [LSTMCell(d_in if l == 0 else width, hidden, rng) for l in range(num_layers)]
        self.backward_cells = (
            [LSTMCell(d_in if l == 0 else width, hidden, rng) for l in range(num_layers)]
            if bidirectional else [])

    @property
    def num_layers(self):
        return len(self.forward_cells)

    def __call__(self, x, mode: str = "eval", rng=None):
        return bilstm_encode(self, x, mode, rng)


def bilstm_encode(stack: LSTMStack, x, mode: str = "eval", rng=None, layer_outputs=None):
    """Encode ``x``; returns ``(H, final)`` where ``final`` concatenates the last
    forward output (t = T-1) and the last backward output (t = 0)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    xb, single = _batched(x)
    if xb.shape[1] < 1:
        raise DimensionError("bilstm_encode needs T >= 1")
    h = xb
    t_len = xb.shape[1]
    final = None
    for l in range(stack.num_layers):
        if l > 0:
            h = dropout(h, stack.dropout, mode, rng)
        fwd = stack.forward_cells[l].sequence(h)
        last_fwd = getitem(fwd, (slice(None), t_len - 1))
        if stack.bidirectional:
            bwd = stack.backward_cells[l].sequence(h, reverse=True)
            h = concat([fwd, bwd], axis=-1)
            final = concat([last_fwd, getitem(bwd, (slice(None), 0))], axis=-1)
        else:
            h, final = fwd, last_fwd
        if layer_outputs is not None:
            layer_outputs.append(h)
    if single:
        return reshape(h, h.shape[1:]), reshape(final, final.shape[1:])
    return h, final


class GRULayer(Module):
    """Single mono-directional GRU layer."""

    def __init__(self, d_in: int, hidden: int, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        fan_in = d_in + hidden
        self.w_x = Tensor(_uniform(rng, fan_in, (d_in, 3 * hidden)), requires_grad=True)
        self.w_h = Tensor(_uniform(rng, fan_in, (hidden, 3 * hidden)), requires_grad=True)
        self.b_x = Tensor(np.zeros(3 * hidden), requires_grad=True)
        self.b_h = Tensor(np.zeros(3 * hidden), requires_grad=True)

    def __call__(self, x):
        xb, single = _batched(x if isinstance(x, Tensor) else Tensor(x))
        h = gru_sequence(xb, self.w_x, self.w_h, self.b_x, self.b_h)
        return reshape(h, h.shape[1:]) if single else h


# -- attention -------------------------------------------------------------------

class SelfAttention(Module):
    """Multi-head self-attention; heads split the model width into D/H subspaces."""

    def __init__(self, d_model: int, heads: int, act: str = "identity", rng=None):
        if heads < 1 or d_model % heads:
            raise ConfigurationError(f"model width {d_model} is not divisible by {heads} heads")
        rng = np.random.default_rng() if rng is None else rng
        self.heads = heads
        self.act = act
        self.w_q = Tensor(_uniform(rng, d_model, (d_model, d_model)), requires_grad=True)
        self.w_k = Tensor(_uniform(rng, d_model, (d_model, d_model)), requires_grad=True)
        self.w_v = Tensor(_uniform(rng, d_model, (d_model, d_model)), requires_grad=True)
        self.w_o = Tensor(_uniform(rng, d_model, (d_model, d_model)), requires_grad=True)

    def __call__(self, x):
        return self_attention(self, x)


def self_attention(layer: SelfAttention, x):
    """Returns ``(H, A)``; ``A`` is a list with one ``[.., T, T]`` row-stochastic
    array per head (rows index outputs, columns index inputs)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    xb, single = _batched(x)
    n, t_len, d = xb.shape
    if d != layer.w_q.shape[0]:
        raise DimensionError(f"self-attention expects width {layer.w_q.shape[0]}, got {d}")
    heads = layer.heads
    dh = d // heads

    def split(w):
        p = activation(matmul(xb, w), layer.act)
        return transpose(reshape(p, (n, t_len, heads, dh)), (0, 2, 1, 3))

    q, k, v = split(layer.w_q), split(layer.w_k), split(layer.w_v)
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    attn = softmax(scores, axis=-1)
    mixed = matmul(attn, v)
    merged = reshape(transpose(mixed, (0, 2, 1, 3)), (n, t_len, d))
    h = matmul(merged, layer.w_o)
    maps = [attn.data[:, i] for i in range(heads)]
    if single:
        return reshape(h, (t_len, d)), [m[0] for m in maps]
    return h, maps


class SoftAttention(Module):
    """Attention with a learned fixed key vector: one weight per time step."""

    def __init__(self, d_in: int, d_hidden: int, fn: str = "tan", rng=None):
        if fn not in ("tan", "tanh"):
            raise ConfigurationError(f"soft-attention nonlinearity must be 'tan' or 'tanh', got {fn!r}")
        rng = np.random.default_rng() if rng is None else rng
        self.fn = fn
        self.w_a = Tensor(_uniform(rng, d_in, (d_in, d_hidden)), requires_grad=True)
        self.key = Tensor(_uniform(rng, d_hidden, (d_hidden, 1)), requires_grad=True)

    def __call__(self, x):
        return soft_attention(self, x)


def soft_attention(layer: SoftAttention, x):
    """``alpha = softmax_t(fn(X W_a) k)``, ``h = alpha^T X``; returns ``(h, alpha)``."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    xb, single = _batched(x)
    n, t_len, d = xb.shape
    logits = matmul(activation(matmul(xb, layer.w_a), layer.fn), layer.key)
    alpha = softmax(reshape(logits, (n, 1, t_len)), axis=-1)
    h = reshape(matmul(alpha, xb), (n, d))
    alpha = reshape(alpha, (n, t_len))
    if single:
        return reshape(h, (d,)), reshape(alpha, (t_len,))
    return h, alpha


def positional_encoding(t_len: int, dim: int) -> np.ndarray:
    """Sinusoidal table: sin on even columns, cos on odd columns."""
    if dim % 2:
        raise ConfigurationError(f"positional encoding needs an even width, got {dim}")
    pos = np.arange(t_len, dtype=float)[:, None]
    rates = 10000.0 ** (np.arange(0, dim, 2, dtype=float) / dim)
    pe = np.empty((t_len, dim))
    pe[:, 0::2] = np.sin(pos / rates)
    pe[:, 1::2] = np.cos(pos / rates)
    return pe


class TransformerBlock(Module):
    """Post-norm encoder block: LN(x + MHA(x)) then LN(h + FFN(h))."""

    def __init__(self, d_model: int, heads: int, d_ff: int, act: str = "identity", rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.attention = SelfAttention(d_model, heads, act, rng)
        self.norm1 = LayerNorm(d_model)
        self.ff1 = Dense(d_model, d_ff, "relu", rng=rng)
        self.ff2 = Dense(d_ff, d_model, rng=rng)
        self.norm2 = LayerNorm(d_model)

    def __call__(self, x):
        a, maps = self_attention(self.attention, x)
        h = self.norm1(x + a)
        h = self.norm2(h + self.ff2(self.ff1(h)))
        return h, maps


# -- convolution -----------------------------------------------------------------

class ResidualBlock1D(Module):
    """``H = relu(bn(conv(X))) + X`` with equal channel counts on both paths."""

    def __init__(self, channels: int, kernel_size: int, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.channels = channels
        self.kernel_size = kernel_size
        self.conv = Conv1d(channels, channels, kernel_size, rng)
        self.norm = BatchNorm(channels)

    def branch(self, x, mode: str):
        return activation(self.norm(self.conv(x), mode), "relu")

    def __call__(self, x, mode: str = "eval"):
        return residual_block(self, x, mode)


def residual_block(block: ResidualBlock1D, x, mode: str = "eval"):
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-1] != block.channels:
        raise DimensionError(f"residual block has {block.channels} channels, input has {x.shape[-1]}")
    return block.branch(x, mode) + x
