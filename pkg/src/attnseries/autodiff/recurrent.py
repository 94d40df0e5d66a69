"""Fused recurrent kernels with backpropagation through time.

Each call records a single tape node for a whole sequence, which keeps the
Python overhead per time step to a handful of numpy calls. Both kernels start
from zero hidden (and cell) states.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .ops import _sigmoid
from .tensor import Tensor, as_tensor, custom_op


def _check(x, w_x, w_h, gates):
    if x.ndim != 3:
        raise DimensionError(f"expected a [N, T, D] sequence, got {x.shape}")
    hidden = w_h.shape[0]
    if w_x.shape != (x.shape[-1], gates * hidden) or w_h.shape != (hidden, gates * hidden):
        raise DimensionError(
            f"recurrent weights {w_x.shape}, {w_h.shape} do not fit input {x.shape} "
            f"with {gates} gates of width {hidden}")
    if x.shape[1] < 1:
        raise DimensionError("recurrent layers need T >= 1")
    return hidden


def lstm_sequence(x, w_x, w_h, bias, reverse: bool = False) -> Tensor:
    """Run an LSTM over ``x`` [N, T, D]; returns all cell outputs [N, T, H].

    Gate layout along the last weight axis is (forget, input, modulation, output).
    With ``reverse`` the sequence is consumed from the last step to the first
    and outputs stay aligned with their input time steps.
    """
    x, w_x, w_h, bias = (as_tensor(a) for a in (x, w_x, w_h, bias))
    hd = _check(x, w_x, w_h, 4)
    xd, wx, wh = x.data, w_x.data, w_h.data
    n, t_len, d_in = xd.shape
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)

    xz = xd @ wx + bias.data
    acts = np.empty((t_len, n, 4 * hd))
    cells = np.zeros((t_len + 1, n, hd))
    hiddens = np.zeros((t_len + 1, n, hd))
    tanh_c = np.empty((t_len, n, hd))
    out = np.empty((n, t_len, hd))
    for step, t in enumerate(order):
        z = xz[:, t] + hiddens[step] @ wh
        a = acts[step]
        a[:, :2 * hd] = _sigmoid(z[:, :2 * hd])
        a[:, 2 * hd:3 * hd] = np.tanh(z[:, 2 * hd:3 * hd])
        a[:, 3 * hd:] = _sigmoid(z[:, 3 * hd:])
        f, i, g, o = a[:, :hd], a[:, hd:2 * hd], a[:, 2 * hd:3 * hd], a[:, 3 * hd:]
        c = f * cells[step] + i * g
        cells[step + 1] = c
        tanh_c[step] = np.tanh(c)
        hiddens[step + 1] = o * tanh_c[step]
        out[:, t] = hiddens[step + 1]

    def _bw(g_out):
        dxz = np.empty((n, t_len, 4 * hd))
        dwh = np.zeros_like(wh)
        dh_next = np.zeros((n, hd))
        dc_next = np.zeros((n, hd))
        steps = list(enumerate(order))
        for step, t in reversed(steps):
            a = acts[step]
            f, i, g, o = a[:, :hd], a[:, hd:2 * hd], a[:, 2 * hd:3 * hd], a[:, 3 * hd:]
            tc = tanh_c[step]
            dh = g_out[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = np.empty((n, 4 * hd))
            dz[:, :hd] = dc * cells[step] * f * (1.0 - f)
            dz[:, hd:2 * hd] = dc * g * i * (1.0 - i)
            dz[:, 2 * hd:3 * hd] = dc * i * (1.0 - g * g)
            dz[:, 3 * hd:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dwh += hiddens[step].T @ dz
            dh_next = dz @ wh.T
            dxz[:, t] = dz
        flat = dxz.reshape(-1, 4 * hd)
        dx = dxz @ wx.T if x.requires_grad else None
        dwx = xd.reshape(-1, d_in).T @ flat if w_x.requires_grad else None
        db = flat.sum(axis=0) if bias.requires_grad else None
        return dx, dwx, dwh, db

    return custom_op(out, (x, w_x, w_h, bias), _bw)


def gru_sequence(x, w_x, w_h, b_x, b_h, reverse: bool = False) -> Tensor:
    """Run a GRU over ``x`` [N, T, D]; returns all hidden states [N, T, H].

    Gate layout is (reset, update, candidate):
    ``n = tanh(x W_n + b_n + r * (h U_n + c_n))`` and ``h' = (1 - z) * n + z * h``.
    """
    x, w_x, w_h, b_x, b_h = (as_tensor(a) for a in (x, w_x, w_h, b_x, b_h))
    hd = _check(x, w_x, w_h, 3)
    xd, wx, wh = x.data, w_x.data, w_h.data
    n, t_len, d_in = xd.shape
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)

    xz = xd @ wx + b_x.data
    bh = b_h.data
    gates = np.empty((t_len, n, 3 * hd))
    hn_part = np.empty((t_len, n, hd))
    hiddens = np.zeros((t_len + 1, n, hd))
    out = np.empty((n, t_len, hd))
    for step, t in enumerate(order):
        h = hiddens[step]
        hz = h @ wh + bh
        rz = _sigmoid(xz[:, t, :2 * hd] + hz[:, :2 * hd])
        r, z = rz[:, :hd], rz[:, hd:]
        hn_part[step] = hz[:, 2 * hd:]
        cand = np.tanh(xz[:, t, 2 * hd:] + r * hn_part[step])
        gates[step, :, :2 * hd] = rz
        gates[step, :, 2 * hd:] = cand
        hiddens[step + 1] = (1.0 - z) * cand + z * h
        out[:, t] = hiddens[step + 1]

    def _bw(g_out):
        dxz = np.empty((n, t_len, 3 * hd))
        dwh = np.zeros_like(wh)
        dbh = np.zeros_like(bh)
        dh_next = np.zeros((n, hd))
        for step, t in reversed(list(enumerate(order))):
            h = hiddens[step]
            r, z, cand = gates[step, :, :hd], gates[step, :, hd:2 * hd], gates[step, :, 2 * hd:]
            dh = g_out[:, t] + dh_next
            dcand = dh * (1.0 - z) * (1.0 - cand * cand)
            dzp = dh * (h - cand) * z * (1.0 - z)
            drp = dcand * hn_part[step] * r * (1.0 - r)
            dx_t = dxz[:, t]
            dx_t[:, :hd] = drp
            dx_t[:, hd:2 * hd] = dzp
            dx_t[:, 2 * hd:] = dcand
            dhz = np.concatenate([drp, dzp, dcand * r], axis=1)
            dwh += h.T @ dhz
            dbh += dhz.sum(axis=0)
            dh_next = dh * z + dhz @ wh.T
        flat = dxz.reshape(-1, 3 * hd)
        dx = dxz @ wx.T if x.requires_grad else None
        dwx = xd.reshape(-1, d_in).T @ flat if w_x.requires_grad else None
        dbx = flat.sum(axis=0) if b_x.requires_grad else None
        return dx, dwx, dwh, dbx, dbh

    return custom_op(out, (x, w_x, w_h, b_x, b_h), _bw)
