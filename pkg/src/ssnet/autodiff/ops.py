"""Layer kernels with hand-written backward passes.

Each op takes and returns :class:`Tensor` objects (arrays are wrapped as
constants). Shapes follow the channels-first convention: ``[batch, channels,
length]`` for convolutional inputs and ``[batch, time, features]`` for
recurrent inputs.
"""

from __future__ import annotations

import numpy as np
from scipy.special import log_softmax

from ssnet.autodiff.params import BatchNormParams
from ssnet.autodiff.tensor import Tensor, accumulate, as_tensor, make, take_columns
from ssnet.errors import DegenerateBatch, InputTooShort, LabelOutOfRange, ShapeMismatch


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def same_padding(kernel_size: int) -> tuple[int, int]:
    """Zero padding (left, right) keeping the length at stride 1; odd leftovers go right."""
    total = kernel_size - 1
    return total // 2, total - total // 2


def _im2col(xp: np.ndarray, k: int, length: int) -> np.ndarray:
    """[batch, ch, length + k - 1] -> [batch, ch * k, length] with row c * k + j holding xp[:, c, j:j + length]."""
    n, c, _ = xp.shape
    cols = np.empty((n, c, k, length), dtype=xp.dtype)
    for j in range(k):
        cols[:, :, j, :] = xp[:, :, j : j + length]
    return cols.reshape(n, c * k, length)


def conv1d(x, w, b) -> Tensor:
    """Cross-correlation with "same" zero padding and stride 1.

    ``x``: [batch, in_ch, len]; ``w``: [out_maps, in_ch, k]; ``b``: [out_maps].
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 3 or w.ndim != 3 or b.ndim != 1:
        raise ShapeMismatch(f"conv1d expects 3-d input/weights and 1-d bias, got {x.shape}, {w.shape}, {b.shape}")
    n, c_in, length = x.shape
    c_out, c_w, k = w.shape
    if c_w != c_in or b.shape[0] != c_out:
        raise ShapeMismatch(f"conv1d weights {w.shape} / bias {b.shape} do not fit input {x.shape}")
    if length < 1 or k < 1:
        raise ShapeMismatch("conv1d needs length >= 1 and kernel_size >= 1")
    left, right = same_padding(k)
    cols = _im2col(np.pad(x.data, ((0, 0), (0, 0), (left, right))), k, length)
    wm = w.data.reshape(c_out, c_in * k)
    out = np.matmul(wm, cols)
    out += b.data[None, :, None]

    def _backward(g):
        if w.requires_grad:
            accumulate(w, np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(w.shape))
        accumulate(b, g.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = np.matmul(wm.T, g).reshape(n, c_in, k, length)
            gxp = np.zeros((n, c_in, length + k - 1), dtype=g.dtype)
            for j in range(k):
                gxp[:, :, j : j + length] += gcols[:, :, j, :]
            accumulate(x, gxp[:, :, left : left + length])

    return make(out, (x, w, b), _backward, "conv1d")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def _backward(g):
        accumulate(x, g * mask)

    return make(np.maximum(x.data, 0), (x,), _backward, "relu")


def maxpool1d(x, window: int = 3) -> Tensor:
    """Non-overlapping max pooling (stride == window); a trailing remainder is dropped.

    Gradient goes to the first maximal element of each window.
    """
    x = as_tensor(x)
    n, c, length = x.shape
    if length < window:
        raise InputTooShort(f"maxpool1d window {window} exceeds input length {length}")
    m = length // window
    xd = x.data
    out = xd[:, :, 0 : m * window : window].copy()
    arg = np.zeros(out.shape, dtype=np.int8)
    for j in range(1, window):
        cand = xd[:, :, j : m * window : window]
        better = cand > out
        np.copyto(out, cand, where=better)
        arg[better] = j

    def _backward(g):
        gx = np.zeros_like(xd)
        for j in range(window):
            gx[:, :, j : m * window : window] = np.where(arg == j, g, 0)
        accumulate(x, gx)

    return make(out, (x,), _backward, "maxpool1d")


def dropout(x, rate: float, train: bool, seed=None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    x = as_tensor(x)
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0:
        return x
    keep = _rng(seed).random(x.shape) >= rate
    scale = (keep / (1.0 - rate)).astype(x.dtype)

    def _backward(g):
        accumulate(x, g * scale)

    return make(x.data * scale, (x,), _backward, "dropout")


def batchnorm(x, p: BatchNormParams, train: bool) -> Tensor:
    """Normalize ``[batch, features]`` per feature, then scale and shift.

    Train mode uses the biased batch variance and moves the running statistics
    toward the batch statistics by ``1 - momentum``.
    """
    x, gamma, beta, stats = as_tensor(x), p.gamma, p.beta, p
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeMismatch(f"batchnorm shapes do not fit: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    xd = x.data
    if train:
        batch = xd.shape[0]
        if batch < 2:
            raise DegenerateBatch("batchnorm in train mode needs at least 2 examples")
        mean = xd.mean(axis=0)
        var = xd.var(axis=0)
        m = stats.momentum
        stats.running_mean[...] = m * stats.running_mean + (1 - m) * mean
        stats.running_var[...] = m * stats.running_var + (1 - m) * var
    else:
        mean = stats.running_mean.astype(xd.dtype)
        var = stats.running_var.astype(xd.dtype)
    inv_std = 1.0 / np.sqrt(var + stats.eps)
    xhat = (xd - mean) * inv_std
    out = gamma.data * xhat + beta.data

    def _backward(g):
        accumulate(gamma, (g * xhat).sum(axis=0))
        accumulate(beta, g.sum(axis=0))
        if not x.requires_grad:
            return
        gxhat = g * gamma.data
        if train:
            batch = xd.shape[0]
            gx = (inv_std / batch) * (
                batch * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0)
            )
        else:
            gx = gxhat * inv_std
        accumulate(x, gx)

    return make(out.astype(xd.dtype), (x, gamma, beta), _backward, "batchnorm")


def dense(x, w, b) -> Tensor:
    """Affine map ``x @ w + b`` with ``w`` shaped [in, out]."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatch(f"dense shapes do not fit: x {x.shape}, w {w.shape}, b {b.shape}")

    def _backward(g):
        accumulate(x, g @ w.data.T)
        accumulate(w, x.data.T @ g)
        accumulate(b, g.sum(axis=0))

    return make(x.data @ w.data + b.data, (x, w, b), _backward, "dense")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of a max-shifted softmax; returns a scalar tensor."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"logits {logits.shape} do not match labels {labels.shape}")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k or not np.issubdtype(labels.dtype, np.integer)):
        raise LabelOutOfRange(f"labels must be integers in [0, {k})")
    logp = log_softmax(logits.data, axis=1)
    loss = -logp[np.arange(n), labels].mean()

    def _backward(g):
        grad = np.exp(logp)
        grad[np.arange(n), labels] -= 1.0
        accumulate(logits, grad * (g / n))

    return make(np.asarray(loss, dtype=logits.dtype), (logits,), _backward, "softmax_ce")


# recurrent kernels. Weights are stacked by gate in the order
# (forget, input, candidate, output): w is [4, hidden, hidden + input] acting on
# the concatenation [h_prev, x_t]; b is [4, hidden].
#
# Internally the gates are reordered to (forget, input, output, candidate) so the
# three sigmoid gates are contiguous, and sigmoid(a) is evaluated as
# 0.5 * tanh(a / 2) + 0.5 with the 1/2 folded into the weights: one tanh call
# covers all four gates.
_ORDER = (0, 1, 3, 2)
_BLOCK = 32  # time steps per vectorized backward block


def _check_lstm(w, b, input_size):
    if w.ndim != 3 or w.shape[0] != 4 or b.shape != (4, w.shape[1]):
        raise ShapeMismatch(f"LSTM weights must be [4, H, H+I] with bias [4, H], got {w.shape}, {b.shape}")
    hidden = w.shape[1]
    if w.shape[2] != hidden + input_size:
        raise ShapeMismatch(f"LSTM weights {w.shape} do not fit input size {input_size}")
    return hidden


def _kernel_weights(w: np.ndarray, b: np.ndarray, dtype):
    """Reordered weights (recurrent part [H, 4H], input part [I, 4H]), bias [4H] and their unscaled forms."""
    hidden = w.shape[1]
    wr = w[list(_ORDER)].reshape(4 * hidden, -1).astype(dtype)
    br = b[list(_ORDER)].reshape(-1).astype(dtype)
    scale = np.full(4 * hidden, 0.5, dtype=dtype)
    scale[3 * hidden :] = 1.0
    ws = wr * scale[:, None]
    return (
        np.ascontiguousarray(ws[:, :hidden].T),
        np.ascontiguousarray(ws[:, hidden:].T),
        br * scale,
        wr[:, :hidden],
        wr[:, hidden:],
    )


def _unorder(grad_rows: np.ndarray, hidden: int) -> np.ndarray:
    """Map gradients laid out in kernel gate order back to the stored order."""
    blocks = grad_rows.reshape(4, hidden, *grad_rows.shape[1:])
    out = np.empty_like(blocks)
    out[list(_ORDER)] = blocks
    return out


def _activate(z: np.ndarray, hidden: int) -> None:
    """In place on scaled pre-activations: tanh everywhere, then map the sigmoid gates to (0, 1)."""
    np.tanh(z, out=z)
    s = z[:, : 3 * hidden]
    s *= 0.5
    s += 0.5


def _step(act, c_prev, c_out, h_out, hidden):
    h = hidden
    np.multiply(act[:, :h], c_prev, out=c_out)
    c_out += act[:, h : 2 * h] * act[:, 3 * h :]
    np.multiply(act[:, 2 * h : 3 * h], np.tanh(c_out), out=h_out)


def _gate_grads(act, dc, dh, c_prev, c, hidden):
    """Backprop one step; returns (unscaled pre-activation grads [batch, 4h], dc_prev)."""
    h = hidden
    f, i, o, g = act[:, :h], act[:, h : 2 * h], act[:, 2 * h : 3 * h], act[:, 3 * h :]
    tc = np.tanh(c)
    dz = np.empty_like(act)
    df, di, do, dg = dz[:, :h], dz[:, h : 2 * h], dz[:, 2 * h : 3 * h], dz[:, 3 * h :]
    # output gate: dh * tanh(c) * o * (1 - o)
    np.multiply(dh, tc, out=do)
    np.multiply(tc, tc, out=tc)
    np.subtract(1.0, tc, out=tc)
    tc *= o
    tc *= dh
    dc = tc + dc
    np.subtract(1.0, o, out=dg)
    dg *= o
    do *= dg
    # sigmoid derivatives of forget and input gates on the contiguous block
    sig = act[:, : 2 * h]
    dfi = dz[:, : 2 * h]
    np.subtract(1.0, sig, out=dfi)
    dfi *= sig
    df *= c_prev
    df *= dc
    di *= g
    di *= dc
    # candidate: dc * i * (1 - g^2)
    np.multiply(g, g, out=dg)
    np.subtract(1.0, dg, out=dg)
    dg *= i
    dg *= dc
    dc *= f
    return dz, dc


def lstm_cell(x_t, h_prev, c_prev, w, b) -> tuple[Tensor, Tensor]:
    """One LSTM step: returns (h_t, c_t), each [batch, hidden]."""
    x_t, h_prev, c_prev, w, b = (as_tensor(v) for v in (x_t, h_prev, c_prev, w, b))
    hidden = _check_lstm(w, b, x_t.shape[-1])
    if h_prev.shape != (x_t.shape[0], hidden) or c_prev.shape != h_prev.shape:
        raise ShapeMismatch(f"state shapes {h_prev.shape}, {c_prev.shape} do not fit hidden size {hidden}")
    dtype = np.result_type(x_t.data, w.data)
    wh_s, wx_s, b_s, wh, wx = _kernel_weights(w.data, b.data, dtype)
    act = h_prev.data @ wh_s + x_t.data @ wx_s + b_s
    _activate(act, hidden)
    c = np.empty_like(h_prev.data, dtype=dtype)
    h = np.empty_like(c)
    _step(act, c_prev.data, c, h, hidden)

    def _backward(grad):
        dh, dc = grad[:, :hidden], grad[:, hidden:]
        dz, dc_prev = _gate_grads(act, dc, dh, c_prev.data, c, hidden)
        accumulate(c_prev, dc_prev)
        accumulate(h_prev, dz @ wh)
        accumulate(x_t, dz @ wx)
        gw = np.concatenate([dz.T @ h_prev.data, dz.T @ x_t.data], axis=1)
        accumulate(w, _unorder(gw, hidden))
        accumulate(b, _unorder(dz.sum(axis=0), hidden))

    hc = make(np.concatenate([h, c], axis=1), (x_t, h_prev, c_prev, w, b), _backward, "lstm_cell")
    return take_columns(hc, 0, hidden), take_columns(hc, hidden, 2 * hidden)


def lstm_sequence(x, w, b, recurrent_dropout: float = 0.0, train: bool = False, seed=None) -> Tensor:
    """Run an LSTM over ``x`` [batch, time, input] from a zero state; returns the last hidden state.

    In train mode a single dropout mask per sequence is applied to the
    recurrent input h_{t-1} at every step. The backward pass reuses forward
    buffers and may run only once per forward call.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 3:
        raise ShapeMismatch(f"lstm_sequence expects [batch, time, input], got {x.shape}")
    n, steps, _ = x.shape
    if steps < 1:
        raise ShapeMismatch("lstm_sequence needs at least one time step")
    hidden = _check_lstm(w, b, x.shape[2])
    dtype = np.result_type(x.data, w.data)
    wh_s, wx_s, b_s, wh, wx = _kernel_weights(w.data, b.data, dtype)
    mask = None
    if train and recurrent_dropout > 0:
        keep = _rng(seed).random((n, hidden)) >= recurrent_dropout
        mask = (keep / (1.0 - recurrent_dropout)).astype(dtype)

    xt = np.ascontiguousarray(x.data.transpose(1, 0, 2), dtype=dtype)  # [time, batch, input]
    # input contributions for every step at once; each slice is then turned
    # into activations in place, and during backward into gate gradients
    acts = np.matmul(xt, wx_s)
    acts += b_s
    hs = np.zeros((steps + 1, n, hidden), dtype=dtype)
    cs = np.zeros((steps + 1, n, hidden), dtype=dtype)
    for t in range(steps):
        z = acts[t]
        z += (hs[t] * mask if mask is not None else hs[t]) @ wh_s
        _activate(z, hidden)
        _step(z, cs[t], cs[t + 1], hs[t + 1], hidden)

    def _backward(grad):
        dh = np.array(grad, dtype=dtype)
        dc = np.zeros_like(dh)
        h = hidden
        # subnormal floats slow BLAS and ufuncs down by ~100x; values below
        # ``tiny`` are flushed to zero, and once the whole recurrent gradient
        # is below tiny/eps the remaining steps are skipped (their weight
        # gradient contributions are smaller than tiny/eps as well)
        info = np.finfo(dtype)
        tiny, negligible = info.tiny, info.tiny / info.eps
        for stop in range(steps, 0, -_BLOCK):
            if np.abs(dh).max() < negligible and np.abs(dc).max() < negligible:
                acts[:stop] = 0
                break
            start = max(0, stop - _BLOCK)
            # step-local derivative factors, vectorized over the block; they
            # replace the activations in ``acts`` so that each step below only
            # multiplies them by the incoming dc / dh
            blk = acts[start:stop]
            f = blk[..., :h].copy()
            o = blk[..., 2 * h : 3 * h]
            tc = np.tanh(cs[start + 1 : stop + 1])
            through = o * (1.0 - tc * tc)  # dh -> dc
            o *= (1.0 - o) * tc
            sig = blk[..., : 2 * h]
            g = blk[..., 3 * h :].copy()
            i = blk[..., h : 2 * h].copy()
            sig *= 1.0 - sig
            blk[..., :h] *= cs[start:stop]
            blk[..., h : 2 * h] *= g
            blk[..., 3 * h :] = i * (1.0 - g * g)
            for t in range(stop - 1, start - 1, -1):
                k = t - start
                dz = acts[t]
                dc += dh * through[k]
                dz[:, 2 * h : 3 * h] *= dh
                dz[:, :h] *= dc
                dz[:, h : 2 * h] *= dc
                dz[:, 3 * h :] *= dc
                dc *= f[k]
                np.putmask(dz, np.abs(dz) < tiny, 0)
                np.putmask(dc, np.abs(dc) < tiny, 0)
                dh = dz @ wh
                if mask is not None:
                    dh *= mask
        h_in = hs[:-1] * mask if mask is not None else hs[:-1]
        gwh = np.tensordot(acts, h_in, axes=([0, 1], [0, 1]))
        gwx = np.tensordot(acts, xt, axes=([0, 1], [0, 1]))
        accumulate(w, _unorder(np.concatenate([gwh, gwx], axis=1), hidden))
        accumulate(b, _unorder(acts.sum(axis=(0, 1)), hidden))
        if x.requires_grad:
            accumulate(x, np.matmul(acts, wx).transpose(1, 0, 2))

    return make(hs[steps].copy(), (x, w, b), _backward, "lstm_sequence")
