import numpy as np
import pytest

from attnseries.autodiff import Tensor, concat, flip, gru_sequence, reshape
from attnseries.errors import ConfigurationError, DimensionError
from attnseries.layers import (
    Dense, GRULayer, LSTMStack, ResidualBlock1D, SelfAttention, SoftAttention,
    TransformerBlock, bilstm_encode, dense_forward, lstm_step, positional_encoding,
    residual_block, self_attention, soft_attention,
)
from gradcheck import check_gradients, weighted_sum


def rng(seed=0):
    return np.random.default_rng(seed)


def _set(t: Tensor, value):
    t.data[...] = value


# -- dense -----------------------------------------------------------------

def test_dense_examples():
    layer = Dense(2, 2, "tanh", rng=rng())
    _set(layer.weight, 0.0)
    assert np.array_equal(dense_forward(layer, np.ones((3, 2))).data, np.zeros((3, 2)))

    ident = Dense(2, 2, rng=rng())
    _set(ident.weight, np.eye(2))
    x = rng(1).normal(size=(4, 2))
    assert np.allclose(ident(x).data, x)

    r = Dense(2, 2, "relu", rng=rng())
    _set(r.weight, [[1.0, 0.0], [0.0, 2.0]])
    _set(r.bias, [0.5, 0.5])
    assert np.allclose(r(np.array([1.0, 1.0])).data, [1.5, 2.5])


def test_dense_dim_mismatch():
    with pytest.raises(DimensionError):
        Dense(3, 2, rng=rng())(np.ones((4, 2)))


# -- lstm ------------------------------------------------------------------

def _zero_weights(d_in, hd):
    return (Tensor(np.zeros((d_in, 4 * hd))), Tensor(np.zeros((hd, 4 * hd))), Tensor(np.zeros(4 * hd)))


def test_lstm_step_examples():
    w = _zero_weights(3, 2)
    h, c = lstm_step(w, np.ones(3), np.zeros(2), np.zeros(2))
    assert np.array_equal(h.data, [0, 0]) and np.array_equal(c.data, [0, 0])

    h, c = lstm_step(w, np.ones(3), np.zeros(2), np.ones(2))
    assert np.allclose(c.data, 0.5)
    assert np.allclose(h.data, 0.5 * np.tanh(0.5))
    assert abs(h.data[0] - 0.23106) < 1e-5

    w[2].data[:2] = 20.0
    prev = np.array([0.7, -1.3])
    _, c = lstm_step(w, np.ones(3), np.zeros(2), prev)
    assert np.allclose(c.data, prev, atol=1e-8)


def test_lstm_step_dim_mismatch():
    with pytest.raises(DimensionError):
        lstm_step(_zero_weights(3, 2), np.ones(4), np.zeros(2), np.zeros(2))


def _stepwise(cell, x, reverse=False):
    """Reference recurrence composed from lstm_step."""
    steps = range(x.shape[0] - 1, -1, -1) if reverse else range(x.shape[0])
    h = Tensor(np.zeros(cell.w_h.shape[0]))
    c = Tensor(np.zeros(cell.w_h.shape[0]))
    out = {}
    for t in steps:
        h, c = lstm_step(cell.weights, x[t], h, c)
        out[t] = h
    return np.stack([out[t].data for t in range(x.shape[0])])


def test_fused_lstm_matches_stepwise_reference():
    stack = LSTMStack(3, 4, rng=rng(2))
    x = rng(3).normal(size=(6, 3))
    cell_f, cell_b = stack.forward_cells[0], stack.backward_cells[0]
    assert np.allclose(cell_f.sequence(Tensor(x[None])).data[0], _stepwise(cell_f, x), atol=1e-12)
    assert np.allclose(cell_b.sequence(Tensor(x[None]), reverse=True).data[0],
                       _stepwise(cell_b, x, reverse=True), atol=1e-12)


def test_bilstm_single_step_and_reverse_equivalence():
    stack = LSTMStack(2, 3, rng=rng(4))
    x = rng(5).normal(size=(1, 2))
    h, final = bilstm_encode(stack, x)
    assert np.allclose(final.data, h.data[0])

    xs = rng(6).normal(size=(5, 2))
    uni = LSTMStack(2, 3, bidirectional=False, rng=rng(7))
    uni.forward_cells[0] = stack.backward_cells[0]
    h_uni, _ = bilstm_encode(uni, flip(Tensor(xs), 0))
    h_bi, _ = bilstm_encode(stack, xs)
    assert np.allclose(h_uni.data[::-1], h_bi.data[:, 3:], atol=1e-12)


def test_bilstm_layer_widths_and_disjoint_parameters():
    stack = LSTMStack(5, 4, num_layers=3, rng=rng(8))
    assert stack.forward_cells[1].w_x.shape == (8, 16)
    ids = [id(p) for p in stack.parameters()]
    assert len(ids) == len(set(ids))
    h, final = bilstm_encode(stack, rng(9).normal(size=(7, 5)))
    assert h.shape == (7, 8) and final.shape == (8,)


def test_bilstm_eval_is_deterministic_and_dropout_only_in_train():
    stack = LSTMStack(3, 4, num_layers=2, dropout=0.5, rng=rng(10))
    x = rng(11).normal(size=(2, 6, 3))
    a = bilstm_encode(stack, x, "eval")[1].data
    b = bilstm_encode(stack, x, "eval")[1].data
    assert np.array_equal(a, b)
    t = bilstm_encode(stack, x, "train", rng(0))[1].data
    assert not np.allclose(a, t)


def test_bilstm_final_gradient_fd():
    stack = LSTMStack(3, 4, num_layers=2, rng=rng(12))
    x = Tensor(rng(13).normal(size=(5, 3)), requires_grad=True)
    w = rng(14).normal(size=8)
    err = check_gradients(lambda: weighted_sum(bilstm_encode(stack, x)[1], w),
                          [x] + stack.parameters(), n_coords=30)
    assert err < 1e-4


def test_gru_matches_cell_equations():
    layer = GRULayer(3, 4, rng(15))
    for p in (layer.b_x, layer.b_h):
        _set(p, rng(16).normal(size=p.shape))
    x = rng(17).normal(size=(5, 3))
    hd = 4
    h = np.zeros(hd)
    sig = lambda z: 1 / (1 + np.exp(-z))
    ref = []
    for t in range(5):
        gx = x[t] @ layer.w_x.data + layer.b_x.data
        gh = h @ layer.w_h.data + layer.b_h.data
        r = sig(gx[:hd] + gh[:hd])
        z = sig(gx[hd:2 * hd] + gh[hd:2 * hd])
        n = np.tanh(gx[2 * hd:] + r * gh[2 * hd:])
        h = (1 - z) * n + z * h
        ref.append(h)
    assert np.allclose(layer(x).data, np.stack(ref), atol=1e-12)


def test_gru_gradient_fd():
    layer = GRULayer(2, 3, rng(18))
    x = Tensor(rng(19).normal(size=(2, 4, 2)), requires_grad=True)
    w = rng(20).normal(size=(2, 4, 3))
    err = check_gradients(lambda: weighted_sum(gru_sequence(x, layer.w_x, layer.w_h, layer.b_x, layer.b_h), w),
                          [x] + layer.parameters(), n_coords=30)
    assert err < 1e-4


# -- self-attention --------------------------------------------------------

def test_self_attention_single_step():
    layer = SelfAttention(4, 2, rng=rng(21))
    x = rng(22).normal(size=(1, 4))
    h, maps = self_attention(layer, x)
    assert all(np.array_equal(a, [[1.0]]) for a in maps)
    assert np.allclose(h.data, (x @ layer.w_v.data) @ layer.w_o.data)


def test_self_attention_identical_rows():
    layer = SelfAttention(4, 2, rng=rng(23))
    x = np.tile(rng(24).normal(size=(1, 4)), (5, 1))
    h, maps = self_attention(layer, x)
    for a in maps:
        assert np.allclose(a, 0.2, atol=1e-12)
    assert np.allclose(h.data, h.data[0], atol=1e-12)


def test_self_attention_hand_computed():
    layer = SelfAttention(1, 1, rng=rng(25))
    _set(layer.w_q, [[2.0]])
    _set(layer.w_k, [[0.5]])
    _set(layer.w_v, [[3.0]])
    _set(layer.w_o, [[-1.0]])
    x = np.array([[1.0], [2.0]])
    q, k, v = 2 * x[:, 0], 0.5 * x[:, 0], 3 * x[:, 0]
    logits = np.outer(q, k)
    a = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    h, maps = self_attention(layer, x)
    assert np.max(np.abs(maps[0] - a)) < 1e-10
    assert np.max(np.abs(h.data[:, 0] - (-(a @ v)))) < 1e-10


def test_self_attention_heads_must_divide_width():
    with pytest.raises(ConfigurationError):
        SelfAttention(6, 4, rng=rng())


@pytest.mark.parametrize("act", ["identity", "tanh"])
def test_self_attention_permutation_equivariance(act):
    layer = SelfAttention(6, 3, act, rng=rng(26))
    x = rng(27).normal(size=(7, 6))
    perm = rng(28).permutation(7)
    h, maps = self_attention(layer, x)
    hp, maps_p = self_attention(layer, x[perm])
    assert np.max(np.abs(hp.data - h.data[perm])) < 1e-10
    for a, ap in zip(maps, maps_p):
        assert np.max(np.abs(ap - a[np.ix_(perm, perm)])) < 1e-10
        assert np.allclose(a.sum(axis=-1), 1, atol=1e-10) and a.min() >= 0 and a.max() <= 1


def test_transformer_block_gradient_fd():
    block = TransformerBlock(4, 2, 16, rng=rng(29))
    x = Tensor(rng(30).normal(size=(2, 5, 4)), requires_grad=True)
    w = rng(31).normal(size=(2, 5, 4))
    params = block.parameters()
    # five random parameter coordinates plus input coordinates
    err = check_gradients(lambda: weighted_sum(block(x)[0], w), params, n_coords=5, rng=rng(32))
    assert err < 1e-4
    err = check_gradients(lambda: weighted_sum(block(x)[0], w), [x] + params, n_coords=30)
    assert err < 1e-4


# -- soft attention --------------------------------------------------------

def test_soft_attention_examples():
    layer = SoftAttention(3, 4, rng=rng(33))
    x1 = rng(34).normal(size=(1, 3))
    h, alpha = soft_attention(layer, x1)
    assert np.array_equal(alpha.data, [1.0]) and np.allclose(h.data, x1[0])

    _set(layer.w_a, 0.0)
    x = rng(35).normal(size=(6, 3))
    h, alpha = soft_attention(layer, x)
    assert np.allclose(alpha.data, 1 / 6) and np.allclose(h.data, x.mean(axis=0))


@pytest.mark.parametrize("fn", ["tan", "tanh"])
def test_soft_attention_sums_to_one_and_gradients(fn):
    layer = SoftAttention(3, 4, fn, rng=rng(36))
    x = Tensor(rng(37).normal(scale=0.3, size=(2, 6, 3)), requires_grad=True)
    _, alpha = soft_attention(layer, x)
    assert np.allclose(alpha.data.sum(axis=-1), 1, atol=1e-12)
    w = rng(38).normal(size=(2, 3))
    err = check_gradients(lambda: weighted_sum(soft_attention(layer, x)[0], w),
                          [x] + layer.parameters(), n_coords=30)
    assert err < 1e-4


def test_soft_attention_rejects_unknown_fn():
    with pytest.raises(ConfigurationError):
        SoftAttention(3, 4, "relu")


# -- positional encoding ---------------------------------------------------

def test_positional_encoding_examples():
    pe = positional_encoding(50, 8)
    assert np.array_equal(pe[0, 0::2], np.zeros(4)) and np.array_equal(pe[0, 1::2], np.ones(4))
    assert abs(pe[1, 0] - 0.84147) < 1e-5
    assert np.all(np.abs(pe) <= 1)
    with pytest.raises(ConfigurationError):
        positional_encoding(5, 7)


# -- residual block --------------------------------------------------------

def test_residual_block_examples():
    block = ResidualBlock1D(3, 5, rng(39))
    x = Tensor(rng(40).normal(size=(2, 8, 3)), requires_grad=True)
    out = residual_block(block, x, "eval")
    assert np.allclose(out.data - x.data, block.branch(x, "eval").data, rtol=0, atol=1e-12)

    block = ResidualBlock1D(3, 5, rng(39))
    _set(block.conv.kernels, 0.0)
    assert np.allclose(residual_block(block, x, "eval").data, x.data)
    from attnseries.autodiff import Tape, backward
    x.grad = None
    with Tape() as tape:
        loss = residual_block(block, x, "eval").sum()
    backward(loss, tape)
    assert np.array_equal(x.grad, np.ones_like(x.data))


def test_residual_block_channel_mismatch():
    with pytest.raises(DimensionError):
        residual_block(ResidualBlock1D(3, 3, rng()), np.ones((4, 2)))


def test_residual_block_gradient_fd():
    block = ResidualBlock1D(2, 3, rng(41))
    x = Tensor(rng(42).normal(size=(2, 6, 2)), requires_grad=True)
    w = rng(43).normal(size=(2, 6, 2))
    err = check_gradients(lambda: weighted_sum(block(x, "train"), w), [x] + block.parameters(), n_coords=30)
    assert err < 1e-4


def test_dense_gradient_fd():
    layer = Dense(3, 4, "tanh", rng=rng(44))
    x = Tensor(rng(45).normal(size=(5, 3)), requires_grad=True)
    w = rng(46).normal(size=(5, 4))
    assert check_gradients(lambda: weighted_sum(layer(x), w), [x] + layer.parameters()) < 1e-4


def test_reshape_concat_helpers_are_consistent():
    a = Tensor(np.arange(6.0).reshape(2, 3))
    assert np.array_equal(concat([a, a], axis=0).data[2:], a.data)
    assert reshape(a, (3, 2)).shape == (3, 2)
