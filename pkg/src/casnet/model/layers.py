"""Vectorized float32 building blocks for the forward pass.

Recurrent cells follow the common packed-gate layout: weight_ih rows are the
reset/update/candidate blocks, and the hidden-side bias sits inside the reset
gating so exported training checkpoints drop in unchanged.
"""

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    y = x @ w.T
    if b is not None:
        y = y + b
    return y


def prelu(x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    return np.where(x >= 0.0, x, alpha.reshape(-1)[0] * x)


def frame_layer_norm(x, gamma, beta, eps: float = 1e-5):
    """Normalize each time step over (channels, frequency); x is (C, T, F)."""
    mu = x.mean(axis=(0, 2), keepdims=True)
    var = x.var(axis=(0, 2), keepdims=True)
    xn = (x - mu) / np.sqrt(var + eps)
    return xn * gamma[:, None, :] + beta[:, None, :]


def vector_layer_norm(v, gamma, beta, eps: float = 1e-5):
    """Last-axis layer norm for flattened attention frames."""
    mu = v.mean(axis=-1, keepdims=True)
    var = v.var(axis=-1, keepdims=True)
    return (v - mu) / np.sqrt(var + eps) * gamma + beta


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def gru_sequence(x, w_ih, w_hh, b_ih, b_hh, reverse: bool = False) -> np.ndarray:
    """Single-layer GRU over a batch of sequences; x is (B, L, In) -> (B, L, H).

    Initial state is zero. reverse=True scans right-to-left and returns
    outputs aligned with the input order.
    """
    nb, length, _ = x.shape
    h_dim = w_hh.shape[1]
    pre = x @ w_ih.T + b_ih  # (B, L, 3H)
    h = np.zeros((nb, h_dim), dtype=np.float32)
    out = np.empty((nb, length, h_dim), dtype=np.float32)
    steps = range(length - 1, -1, -1) if reverse else range(length)
    for t in steps:
        hh = h @ w_hh.T + b_hh  # (B, 3H)
        pr = pre[:, t]
        r = sigmoid(pr[:, :h_dim] + hh[:, :h_dim])
        z = sigmoid(pr[:, h_dim : 2 * h_dim] + hh[:, h_dim : 2 * h_dim])
        n = np.tanh(pr[:, 2 * h_dim :] + r * hh[:, 2 * h_dim :])
        h = (1.0 - z) * n + z * h
        out[:, t] = h
    return out


def conv2d_freq(x, w, b, pad_left: int) -> np.ndarray:
    """Width-3 stride-2 convolution along frequency; x (Cin, T, F) -> (Cout, T, F')."""
    if pad_left:
        x = np.pad(x, ((0, 0), (0, 0), (pad_left, 0)))
    f_in = x.shape[2]
    f_out = (f_in - 3) // 2 + 1
    cols = np.stack(
        [x[:, :, k : k + 2 * (f_out - 1) + 1 : 2] for k in range(3)], axis=-1
    )  # (Cin, T, F', 3)
    out = np.einsum("itfk,oik->otf", cols, w[:, :, 0, :], optimize=True)
    return out + b[:, None, None]


def deconv2d_freq(x, w, b, crop_left: int, f_out: int) -> np.ndarray:
    """Stride-2 width-3 transposed convolution along frequency.

    w uses the (Cin, Cout, 1, 3) checkpoint layout. The full output of length
    2*(F-1)+3 is sliced to [crop_left, crop_left+f_out), mirroring the encoder
    stage's left padding.
    """
    _, n_t, f_in = x.shape
    c_out = w.shape[1]
    full = 2 * (f_in - 1) + 3
    out = np.zeros((c_out, n_t, full), dtype=np.float32)
    contrib = np.einsum("itf,iok->otfk", x, w[:, :, 0, :], optimize=True)
    for k in range(3):
        out[:, :, k : k + 2 * (f_in - 1) + 1 : 2] += contrib[..., k]
    out += b[:, None, None]
    return out[:, :, crop_left : crop_left + f_out]
