"""Parameter initialization and the LSTM cell shared by both networks.

Init follows the configured defaults: uniform(-s, s) with
s = sqrt(6 / (fan_in + fan_out)) for matrices, zeros for biases, and +1 on
the LSTM forget-gate bias.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Graph, Tensor


def glorot(rng: np.random.Generator, shape: tuple[int, ...], dtype, name: str) -> Tensor:
    fan_in = int(np.prod(shape[:-1]))
    fan_out = int(shape[-1])
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-s, s, size=shape).astype(dtype), requires_grad=True, name=name)


def zeros(shape: tuple[int, ...], dtype, name: str) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, name=name)


def init_lstm(rng: np.random.Generator, in_dim: int, hidden: int, dtype, prefix: str) -> dict[str, Tensor]:
    """Stacked-gate LSTM weights: Wx [in, 4H], Wh [H, 4H], b [4H] (gate order i, f, g, o)."""
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden : 2 * hidden] = 1.0  # forget-gate bias
    return {
        f"{prefix}.Wx": glorot(rng, (in_dim, 4 * hidden), dtype, f"{prefix}.Wx"),
        f"{prefix}.Wh": glorot(rng, (hidden, 4 * hidden), dtype, f"{prefix}.Wh"),
        f"{prefix}.b": Tensor(b, requires_grad=True, name=f"{prefix}.b"),
    }


def lstm_step(
    g: Graph,
    cell: dict[str, Tensor],
    prefix: str,
    x: Tensor,
    h: Tensor,
    c: Tensor,
) -> tuple[Tensor, Tensor]:
    """One LSTM step on a batch: x [B, E], h/c [B, H] -> new (h, c)."""
    hid = cell[f"{prefix}.Wh"].shape[0]
    pre = g.add(
        g.add(g.matmul(x, cell[f"{prefix}.Wx"]), g.matmul(h, cell[f"{prefix}.Wh"])),
        cell[f"{prefix}.b"],
    )
    i = g.sigmoid(g.slice_cols(pre, 0, hid))
    f = g.sigmoid(g.slice_cols(pre, hid, 2 * hid))
    gg = g.tanh(g.slice_cols(pre, 2 * hid, 3 * hid))
    o = g.sigmoid(g.slice_cols(pre, 3 * hid, 4 * hid))
    c_new = g.add(g.mul(f, c), g.mul(i, gg))
    h_new = g.mul(o, g.tanh(c_new))
    return h_new, c_new


def affine(g: Graph, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return g.add(g.matmul(x, w), b)
