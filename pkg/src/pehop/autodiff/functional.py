"""Differentiable kernels.  Image ops take (N, C, H, W); an unbatched
(C, H, W) input is treated as a batch of one and returned unbatched."""

from __future__ import annotations

from contextlib import contextmanager
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import LabelOutOfRange, ShapeMismatch
from .tensor import Tensor, as_tensor, make_result


def _push(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.accumulate(g)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _push(a, _unbroadcast(g, a.shape))
        _push(b, _unbroadcast(g, b.shape))

    return make_result(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _push(a, _unbroadcast(g * b.data, a.shape))
        _push(b, _unbroadcast(g * a.data, b.shape))

    return make_result(a.data * b.data, (a, b), backward)


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        _push(x, g.reshape(x.shape))

    return make_result(x.data.reshape(shape), (x,), backward)


def _batched(x: Tensor, ndim: int = 4):
    """Return (x with a leading batch axis, whether one was added)."""
    if x.ndim == ndim - 1:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != ndim:
        raise ShapeMismatch(f"expected {ndim - 1}D or {ndim}D input, got shape {x.shape}")
    return x, False


def _unbatch(y: Tensor, squeezed: bool) -> Tensor:
    return reshape(y, y.shape[1:]) if squeezed else y


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 1) -> Tensor:
    """Cross-correlation; output size ``(H + 2*padding - k) // stride + 1``."""
    x, squeezed = _batched(x)
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    if c_in != c:
        raise ShapeMismatch(f"conv2d: input has {c} channels, weight expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeMismatch(f"conv2d: bias shape {bias.shape}, expected {(c_out,)}")
    p, s = padding, stride
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    ho = (h + 2 * p - kh) // s + 1
    wo = (w + 2 * p - kw) // s + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"conv2d: input {h}x{w} too small")
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, -1)
    wmat = weight.data.reshape(c_out, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        g2d = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        if weight.requires_grad:
            weight.accumulate((g2d.T @ cols).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = (g2d @ wmat).reshape(n, ho, wo, c, kh, kw).transpose(4, 5, 0, 3, 1, 2)
            dcols = np.ascontiguousarray(dcols)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[i, j]
            x.accumulate(dxp[:, :, p:p + h, p:p + w])

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return _unbatch(make_result(np.ascontiguousarray(out), parents, backward), squeezed)


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                 running_var: np.ndarray, training: bool, momentum: float = 0.1,
                 eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation over (batch, H, W).

    In training mode the running statistics arrays are updated in place with
    ``momentum`` (unbiased variance); in eval mode they are used as-is.
    """
    x, squeezed = _batched(x)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"batch_norm2d: {c} channels vs gamma {gamma.shape}")
    axes = (0, 2, 3)
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.data.size // c
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        _push(gamma, (g * xhat).sum(axis=axes))
        _push(beta, g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None, None]
            if training:
                m = x.data.size // c
                dx = (m * dxhat - dxhat.sum(axis=axes, keepdims=True)
                      - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
                dx *= inv_std[None, :, None, None] / m
            else:
                dx = dxhat * inv_std[None, :, None, None]
            x.accumulate(dx)

    out = out.astype(x.dtype, copy=False)
    return _unbatch(make_result(out, (x, gamma, beta), backward), squeezed)


_gate_log: Optional[list] = None


@contextmanager
def trace_gates():
    """Collect every relu gate mask computed inside the block, in call order."""
    global _gate_log
    prev, _gate_log = _gate_log, []
    try:
        yield _gate_log
    finally:
        _gate_log = prev


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _gate_log is not None:
        _gate_log.append(mask)

    def backward(g):
        _push(x, g * mask)

    return make_result(x.data * mask, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ W.T + b`` for x of shape (N,) or (B, N) and W of shape (M, N)."""
    x, squeezed = _batched(x, ndim=2)
    if weight.ndim != 2 or weight.shape[1] != x.shape[1]:
        raise ShapeMismatch(f"linear: input width {x.shape[1]} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeMismatch(f"linear: bias shape {bias.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        _push(x, g @ weight.data)
        _push(weight, g.T @ x.data)
        if bias is not None:
            _push(bias, g.sum(axis=0))

    parents = (x, weight) + ((bias,) if bias is not None else ())
    return _unbatch(make_result(out, parents, backward), squeezed)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    a, sq_a = _batched(a)
    b, sq_b = _batched(b)
    if sq_a != sq_b or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatch(f"concat_channels: {a.shape} vs {b.shape}")
    ca = a.shape[1]

    def backward(g):
        _push(a, g[:, :ca])
        _push(b, g[:, ca:])

    return _unbatch(make_result(np.concatenate([a.data, b.data], axis=1), (a, b), backward), sq_a)


def global_avg_pool(x: Tensor) -> Tensor:
    x, squeezed = _batched(x)
    hw = x.shape[2] * x.shape[3]

    def backward(g):
        _push(x, np.broadcast_to(g[:, :, None, None] / hw, x.shape))

    return _unbatch(make_result(x.data.mean(axis=(2, 3)), (x,), backward), squeezed)


def upsample2x_matrix(n: int) -> np.ndarray:
    """(2n, n) interpolation matrix: output 2i is 3/4 of x[i] plus 1/4 of x[i-1],
    output 2i+1 is 3/4 of x[i] plus 1/4 of x[i+1], neighbours clamped at the ends."""
    mat = np.zeros((2 * n, n))
    for i in range(n):
        mat[2 * i, i] += 0.75
        mat[2 * i, max(i - 1, 0)] += 0.25
        mat[2 * i + 1, i] += 0.75
        mat[2 * i + 1, min(i + 1, n - 1)] += 0.25
    return mat


def bilinear_upsample2x(x: Tensor) -> Tensor:
    x, squeezed = _batched(x)
    if x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeMismatch("bilinear_upsample2x: empty spatial dims")
    uh = upsample2x_matrix(x.shape[2]).astype(x.dtype)
    uw = upsample2x_matrix(x.shape[3]).astype(x.dtype)
    out = np.matmul(np.matmul(uh, x.data), uw.T)

    def backward(g):
        _push(x, np.matmul(np.matmul(uh.T, g), uw))

    return _unbatch(make_result(out, (x,), backward), squeezed)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch."""
    logits, squeezed = _batched(logits, ndim=2)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = logits.shape
    if k < 2:
        raise ShapeMismatch("softmax_cross_entropy needs at least two classes")
    if labels.shape != (n,):
        raise ShapeMismatch(f"labels shape {labels.shape} vs batch {n}")
    if labels.min() < 0 or labels.max() >= k:
        raise LabelOutOfRange(f"labels must lie in [0, {k}), got {labels}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = (log_norm - z[np.arange(n), labels]).mean()

    def backward(g):
        p = np.exp(z - log_norm[:, None])
        p[np.arange(n), labels] -= 1.0
        _push(logits, g * p / n)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def mse_loss(pred: Tensor, target, mask=None) -> Tensor:
    """Mean squared error; with ``mask`` the mean runs over masked-in entries only
    and masked-out entries contribute neither loss nor gradient."""
    target = np.asarray(target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise ShapeMismatch(f"mse_loss: {pred.shape} vs {target.shape}")
    weights = np.ones_like(target) if mask is None else np.asarray(mask, dtype=pred.dtype)
    if weights.shape != pred.shape:
        raise ShapeMismatch(f"mse_loss: mask {weights.shape} vs {pred.shape}")
    count = max(weights.sum(), 1.0)
    diff = (pred.data - target) * weights
    loss = (diff * diff).sum() / count

    def backward(g):
        _push(pred, g * 2.0 * diff / count)

    return make_result(np.asarray(loss, dtype=pred.dtype), (pred,), backward)
