"""The four compared topologies plus the soft-attention comparison model."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .autodiff import (
    Tensor,
    activation,
    avg_pool1d,
    concat,
    dropout,
    global_max_time,
    reshape,
    take,
)
from .errors import ConfigurationError, DimensionError
from .layers import (
    BatchNorm,
    Conv1d,
    Dense,
    GRULayer,
    LSTMStack,
    Module,
    ResidualBlock1D,
    SoftAttention,
    TransformerBlock,
    bilstm_encode,
    positional_encoding,
    soft_attention,
)

ARCHITECTURES = ("lstm_rnn", "transformer", "msresnet", "tempcnn", "softattn_gru")
HIDDEN_DIMS = (16, 32, 64, 128, 256)
MSRESNET_KERNELS = (3, 5, 7)
MSRESNET_POOLS = (16, 11, 6)
MSRESNET_STREAM_DIM = 256


@dataclass(frozen=True)
class ModelSpec:
    """Declarative architecture description; ``validate`` enforces the search domains."""

    architecture: str
    input_dim: int = 13
    num_classes: int = 5
    seq_len: int = 70
    hidden_dim: int = 64
    num_layers: int = 1
    num_heads: int = 1
    kernel_size: int = 5
    dropout: float = 0.0
    positional_encoding: bool = True
    projection_activation: str = "identity"
    soft_attention_fn: str = "tan"
    resample_length: int = 512

    def validate(self) -> "ModelSpec":
        def bad(name, why):
            raise ConfigurationError(f"invalid ModelSpec field {name!r}={getattr(self, name)!r}: {why}")

        if self.architecture not in ARCHITECTURES:
            bad("architecture", f"expected one of {ARCHITECTURES}")
        if self.input_dim < 1:
            bad("input_dim", "must be positive")
        if self.num_classes < 2:
            bad("num_classes", "need at least two classes")
        if self.seq_len < 1:
            bad("seq_len", "must be positive")
        if self.hidden_dim not in HIDDEN_DIMS:
            bad("hidden_dim", f"expected one of {HIDDEN_DIMS}")
        if not 0.0 <= self.dropout < 1.0:
            bad("dropout", "must lie in [0, 1)")
        arch = self.architecture
        if arch == "lstm_rnn" and not 1 <= self.num_layers <= 7:
            bad("num_layers", "LSTM-RNN uses 1..7 layers")
        if arch == "transformer":
            if not 1 <= self.num_layers <= 8:
                bad("num_layers", "Transformer uses 1..8 layers")
            if not 1 <= self.num_heads <= 8:
                bad("num_heads", "Transformer uses 1..8 heads")
            if self.hidden_dim % self.num_heads:
                bad("num_heads", f"must divide hidden_dim={self.hidden_dim}")
            if self.projection_activation not in ("identity", "tanh"):
                bad("projection_activation", "expected 'identity' or 'tanh'")
        if arch == "tempcnn" and self.kernel_size not in (3, 5, 7):
            bad("kernel_size", "TempCNN uses kernel sizes 3, 5 or 7")
        if arch == "softattn_gru" and self.soft_attention_fn not in ("tan", "tanh"):
            bad("soft_attention_fn", "expected 'tan' or 'tanh'")
        if arch == "msresnet" and self.resample_length < max(MSRESNET_POOLS):
            bad("resample_length", f"must be at least {max(MSRESNET_POOLS)}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown ModelSpec fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelOutput:
    logits: Tensor
    attention: list = field(default_factory=list)
    hidden: list = field(default_factory=list)
    pooled: Optional[np.ndarray] = None


def resample_nearest(x, t_out: int) -> Tensor:
    """Nearest-neighbour resampling along time; row j copies row
    round(j (T-1) / (t_out-1)) with halves rounded up, so endpoints are kept."""
    if t_out < 1:
        raise DimensionError(f"target length must be >= 1, got {t_out}")
    x = x if isinstance(x, Tensor) else Tensor(x)
    t_len = x.shape[-2]
    if t_len < 1:
        raise DimensionError("cannot resample an empty series")
    return take(x, resample_indices(t_len, t_out), axis=-2)


def resample_indices(t_len: int, t_out: int) -> np.ndarray:
    if t_out == 1:
        return np.zeros(1, dtype=np.intp)
    j = np.arange(t_out)
    return (2 * j * (t_len - 1) + (t_out - 1)) // (2 * (t_out - 1))


class Model(Module):
    """Base class: ``forward`` maps [T, D] to logits [C] or [N, T, D] to [N, C].

    The classifier head starts at zero, so a fresh model predicts the uniform
    distribution.
    """

    spec: ModelSpec

    def __call__(self, x, mode: str = "eval", rng=None) -> ModelOutput:
        return forward(self, x, mode, rng)

    def _forward(self, x: Tensor, mode: str, rng) -> ModelOutput:
        raise NotImplementedError

    @property
    def hidden_names(self) -> list[str]:
        raise NotImplementedError


def forward(model: Model, x, mode: str = "eval", rng=None) -> ModelOutput:
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"unknown mode {mode!r}")
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim not in (2, 3):
        raise DimensionError(f"expected [T, D] or [N, T, D], got {x.shape}")
    if x.shape[-1] != model.spec.input_dim:
        raise DimensionError(
            f"model expects {model.spec.input_dim} bands, input has {x.shape[-1]}")
    single = x.ndim == 2
    if single:
        x = reshape(x, (1,) + x.shape)
    if mode == "train" and rng is None:
        rng = np.random.default_rng(0)
    out = model._forward(x, mode, rng)
    if single:
        out.logits = reshape(out.logits, (out.logits.shape[-1],))
        out.attention = [a[0] for a in out.attention]
        out.hidden = [h[0] for h in out.hidden]
        if out.pooled is not None:
            out.pooled = out.pooled[0]
    return out


class LSTMRNN(Model):
    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        self.encoder = LSTMStack(spec.input_dim, spec.hidden_dim, spec.num_layers, True,
                                 spec.dropout, rng)
        self.head = Dense(2 * spec.hidden_dim, spec.num_classes, rng=rng, zero=True)

    @property
    def hidden_names(self):
        return [f"lstm{l + 1}" for l in range(self.spec.num_layers)]

    def _forward(self, x, mode, rng):
        layers = []
        _, final = bilstm_encode(self.encoder, x, mode, rng, layer_outputs=layers)
        return ModelOutput(self.head(final), hidden=[h.data for h in layers], pooled=final.data)


class Transformer(Model):
    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        d = spec.hidden_dim
        self.embed = Dense(spec.input_dim, d, bias=False, rng=rng)
        self.blocks = [TransformerBlock(d, spec.num_heads, 4 * d, spec.projection_activation, rng)
                       for _ in range(spec.num_layers)]
        self.head = Dense(d, spec.num_classes, rng=rng, zero=True)
        self._pe_cache: dict[int, np.ndarray] = {}

    @property
    def hidden_names(self):
        return ["embedding"] + [f"block{l + 1}" for l in range(self.spec.num_layers)]

    def _pe(self, t_len):
        if t_len not in self._pe_cache:
            self._pe_cache[t_len] = positional_encoding(t_len, self.spec.hidden_dim)
        return self._pe_cache[t_len]

    def _forward(self, x, mode, rng):
        h = self.embed(x)
        if self.spec.positional_encoding:
            h = h + Tensor(self._pe(x.shape[1]))
        hidden = [h.data]
        maps = []
        for block in self.blocks:
            h, block_maps = block(h)
            hidden.append(h.data)
            maps.extend(block_maps)
        pooled = global_max_time(h)
        return ModelOutput(self.head(pooled), attention=maps, hidden=hidden, pooled=pooled.data)


class _Transition(Module):
    """Bias-free pointwise projection that changes width ahead of a residual block."""

    def __init__(self, d_in, d_out, rng):
        self.conv = Conv1d(d_in, d_out, 1, rng)

    def __call__(self, x, mode):
        return self.conv(x)


class _Stream(Module):
    def __init__(self, d_in, widths, kernel, pool, length, rng):
        self.pool = pool
        self.transitions = []
        self.blocks = []
        prev = d_in
        for w in widths:
            self.transitions.append(_Transition(prev, w, rng))
            self.blocks.append(ResidualBlock1D(w, kernel, rng))
            prev = w
        pooled_len = -(-length // pool)
        self.reduce = Dense(pooled_len * prev, MSRESNET_STREAM_DIM, rng=rng)


class MSResNet(Model):
    """Three residual streams (kernels 3/5/7) on the series resampled to a fixed length."""

    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        d = spec.hidden_dim
        self.widths = (max(d // 4, 1), max(d // 2, 1), d)
        self.streams = [_Stream(spec.input_dim, self.widths, k, p, spec.resample_length, rng)
                        for k, p in zip(MSRESNET_KERNELS, MSRESNET_POOLS)]
        self.head = Dense(len(self.streams) * MSRESNET_STREAM_DIM, spec.num_classes, rng=rng, zero=True)

    @property
    def hidden_names(self):
        return [f"stream{k}_block{b + 1}" for k in MSRESNET_KERNELS for b in range(3)]

    def _forward(self, x, mode, rng):
        x = resample_nearest(x, self.spec.resample_length)
        n = x.shape[0]
        feats, hidden = [], []
        for stream in self.streams:
            h = x
            for trans, block in zip(stream.transitions, stream.blocks):
                h = block(trans(h, mode), mode)
                hidden.append(h.data)
            p = avg_pool1d(h, stream.pool)
            feats.append(stream.reduce(reshape(p, (n, p.shape[1] * p.shape[2]))))
        pooled = concat(feats, axis=-1)
        return ModelOutput(self.head(pooled), hidden=hidden, pooled=pooled.data)


class TempCNN(Model):
    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        d = spec.hidden_dim
        self.convs = [Conv1d(spec.input_dim if i == 0 else d, d, spec.kernel_size, rng) for i in range(3)]
        self.norms = [BatchNorm(d) for _ in range(3)]
        self.fc = Dense(spec.seq_len * d, 4 * d, rng=rng)
        self.fc_norm = BatchNorm(4 * d)
        self.head = Dense(4 * d, spec.num_classes, rng=rng, zero=True)

    @property
    def hidden_names(self):
        return [f"conv{i + 1}" for i in range(3)]

    def _forward(self, x, mode, rng):
        if x.shape[1] != self.spec.seq_len:
            raise DimensionError(
                f"TempCNN was built for T={self.spec.seq_len}, got T={x.shape[1]}; pad or crop at collation")
        p = self.spec.dropout
        h = x
        hidden = []
        for conv, norm in zip(self.convs, self.norms):
            h = dropout(activation(norm(conv(h), mode), "relu"), p, mode, rng)
            hidden.append(h.data)
        n = h.shape[0]
        flat = reshape(h, (n, h.shape[1] * h.shape[2]))
        f = dropout(activation(self.fc_norm(self.fc(flat), mode), "relu"), p, mode, rng)
        return ModelOutput(self.head(f), hidden=hidden, pooled=f.data)


class SoftAttnGRU(Model):
    """Mono-directional GRU followed by soft attention over its hidden sequence."""

    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        d = spec.hidden_dim
        self.gru = GRULayer(spec.input_dim, d, rng)
        self.attention = SoftAttention(d, d, spec.soft_attention_fn, rng)
        self.head = Dense(d, spec.num_classes, rng=rng, zero=True)

    @property
    def hidden_names(self):
        return ["gru"]

    def _forward(self, x, mode, rng):
        h = self.gru(x)
        pooled, alpha = soft_attention(self.attention, h)
        return ModelOutput(self.head(pooled), attention=[alpha.data], hidden=[h.data],
                           pooled=pooled.data)


_BUILDERS = {
    "lstm_rnn": LSTMRNN,
    "transformer": Transformer,
    "msresnet": MSResNet,
    "tempcnn": TempCNN,
    "softattn_gru": SoftAttnGRU,
}


def build(spec: ModelSpec, rng=None) -> Model:
    """Instantiate ``spec``; ``rng`` may be a Generator or an integer seed."""
    spec.validate()
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    return _BUILDERS[spec.architecture](spec, rng)


def has_attention(model: Model) -> bool:
    return model.spec.architecture in ("transformer", "softattn_gru")
