"""Minimal dense-tensor engine with tape-based reverse-mode differentiation.

Everything is float64. Ops are free functions taking the tape first; passing
``tape=None`` runs the forward pass without recording (inference). A Tape is
single-owner: record on it, call :func:`backward` once, discard.

Only the operators the models in this repo need are provided: matmul, 2-D
convolution, ReLU, batch normalization, windowed/interval max pooling, mean
reduction, element-wise arithmetic, concat, reshape, and squared-error loss.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericsError, ShapeError, UsageError

MODES = ("train", "inner", "eval")


class Tensor:
    """A dense float64 array plus a gradient slot filled by backward()."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Records are appended in forward (topological) order; backward() walks
    them in strict reverse order, accumulating gradients additively at
    fan-out points.
    """

    def __init__(self):
        self._records = []

    def record(self, out, vjps):
        self._records.append((out, vjps))

    def __len__(self):
        return len(self._records)


def backward(tape, loss):
    """Fill gradient slots of every tensor reachable from ``loss``.

    Parameter values are left untouched; gradients accumulate into the
    ``.grad`` slots (call ParamSet.zero_grads() between uses).
    """
    if loss.value.shape != ():
        raise UsageError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    if loss.grad is None:
        loss.grad = np.array(1.0)
    else:
        loss.grad = loss.grad + 1.0
    for out, vjps in reversed(tape._records):
        g = out.grad
        if g is None:
            continue
        for inp, vjp in vjps:
            contrib = vjp(g)
            if inp.grad is None:
                inp.grad = contrib
            else:
                inp.grad = inp.grad + contrib


def _emit(tape, op, value, vjps):
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NumericsError(f"{op}: non-finite values in output")
    out = Tensor(value)
    if tape is not None:
        tape.record(out, vjps)
    return out


def constant(value):
    """Leaf tensor for network inputs; gradients may flow into it but are unused."""
    return Tensor(np.asarray(value, dtype=np.float64))


# ---------------------------------------------------------------------------
# element-wise / structural ops


def add(tape, a, b):
    """a + b; same shape, or 2-D a plus 1-D row bias b."""
    av, bv = a.value, b.value
    if av.shape == bv.shape:
        return _emit(tape, "add", av + bv, [(a, lambda g: g), (b, lambda g: g)])
    if av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
        return _emit(tape, "add", av + bv[None, :],
                     [(a, lambda g: g), (b, lambda g: g.sum(axis=0))])
    raise ShapeError(f"add: incompatible shapes {av.shape} and {bv.shape}")


def sub(tape, a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"sub: incompatible shapes {a.value.shape} and {b.value.shape}")
    return _emit(tape, "sub", a.value - b.value, [(a, lambda g: g), (b, lambda g: -g)])


def mul(tape, a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul: incompatible shapes {a.value.shape} and {b.value.shape}")
    av, bv = a.value, b.value
    return _emit(tape, "mul", av * bv, [(a, lambda g: g * bv), (b, lambda g: g * av)])


def mul_const(tape, a, c):
    """Multiply by a constant array/scalar (no gradient through c)."""
    c = np.asarray(c, dtype=np.float64)
    return _emit(tape, "mul_const", a.value * c, [(a, lambda g: g * c)])


def scale(tape, a, s):
    s = float(s)
    return _emit(tape, "scale", a.value * s, [(a, lambda g: g * s)])


def matmul(tape, a, b):
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")
    return _emit(tape, "matmul", av @ bv,
                 [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)])


def relu(tape, a):
    mask = a.value > 0
    return _emit(tape, "relu", np.where(mask, a.value, 0.0), [(a, lambda g: g * mask)])


def reshape(tape, a, shape):
    old = a.value.shape
    return _emit(tape, "reshape", a.value.reshape(shape), [(a, lambda g: g.reshape(old))])


def concat(tape, parts, axis=0):
    values = [p.value for p in parts]
    out = np.concatenate(values, axis=axis)
    vjps = []
    offset = 0
    for p in parts:
        n = p.value.shape[axis]
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(offset, offset + n)
        vjps.append((p, lambda g, sl=tuple(sl): g[sl]))
        offset += n
    return _emit(tape, "concat", out, vjps)


def global_mean(tape, a, axis=0):
    """Mean reduction along one axis (node pooling and the like)."""
    n = a.value.shape[axis]
    return _emit(tape, "global_mean", a.value.mean(axis=axis),
                 [(a, lambda g: np.repeat(np.expand_dims(g / n, axis), n, axis=axis))])


def mse_loss(tape, pred, target):
    """Squared Euclidean distance between pred and a constant target."""
    target = np.asarray(target, dtype=np.float64)
    if pred.value.shape != target.shape:
        raise ShapeError(f"mse_loss: incompatible shapes {pred.value.shape} and {target.shape}")
    diff = pred.value - target
    return _emit(tape, "mse_loss", np.sum(diff * diff), [(pred, lambda g: g * 2.0 * diff)])


def sum_tensors(tape, parts):
    """Sum a list of same-shape tensors (batch loss aggregation)."""
    out = parts[0].value.copy()
    for p in parts[1:]:
        if p.value.shape != out.shape:
            raise ShapeError("sum_tensors: mixed shapes")
        out = out + p.value
    return _emit(tape, "sum_tensors", out, [(p, lambda g: g) for p in parts])


def dropout(tape, a, rate, rng):
    """Inverted dropout with a constant mask drawn from rng; rate in [0, 1)."""
    if rate <= 0.0:
        return a
    keep = (rng.random(a.value.shape) >= rate) / (1.0 - rate)
    return mul_const(tape, a, keep)


# ---------------------------------------------------------------------------
# convolution and pooling


def conv2d(tape, x, w, b=None, stride=1, pad=0):
    """2-D convolution (cross-correlation) with zero padding.

    x: [Cin, H, W] or batched [B, Cin, H, W]; w: [Cout, Cin, kh, kw];
    b: [Cout] or None.
    """
    xv, wv = x.value, w.value
    batched = xv.ndim == 4
    if wv.ndim != 4 or xv.ndim not in (3, 4) or xv.shape[-3] != wv.shape[1]:
        raise ShapeError(f"conv2d: incompatible shapes x={xv.shape} w={wv.shape}")
    x4 = xv if batched else xv[None]
    nb, cin, h, wd = x4.shape
    cout, _, kh, kw = wv.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} too large for input {h}x{wd} with pad {pad}")
    xp = np.pad(x4, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]                  # [B, Cin, Ho, Wo, kh, kw]
    out = np.einsum("bchwij,ocij->bohw", win, wv, optimize=True)
    if b is not None:
        out = out + b.value[None, :, None, None]
    if not batched:
        out = out[0]

    def vjp_x(g):
        g4 = g if batched else g[None]
        dxp = np.zeros_like(xp)
        for di in range(kh):
            for dj in range(kw):
                dxp[:, :, di:di + stride * ho:stride, dj:dj + stride * wo:stride] += \
                    np.einsum("bohw,oc->bchw", g4, wv[:, :, di, dj], optimize=True)
        dx = dxp[:, :, pad:pad + h, pad:pad + wd]
        return dx if batched else dx[0]

    def vjp_w(g):
        g4 = g if batched else g[None]
        return np.einsum("bohw,bchwij->ocij", g4, win, optimize=True)

    vjps = [(x, vjp_x), (w, vjp_w)]
    if b is not None:
        axes = (0, 2, 3) if batched else (1, 2)
        vjps.append((b, lambda g: g.sum(axis=axes)))
    return _emit(tape, "conv2d", out, vjps)


def interval_pool(tape, x, row_spans, col_spans, kind="max"):
    """Pool over an explicit grid of (start, stop) spans per spatial axis.

    x: [C, H, W] or batched [B, C, H, W]; output [..., n_rows, n_cols].
    """
    xv = x.value
    batched = xv.ndim == 4
    if xv.ndim not in (3, 4):
        raise ShapeError(f"interval_pool: expected [..., C, H, W], got {xv.shape}")
    x4 = xv if batched else xv[None]
    nb, c = x4.shape[:2]
    nr, nc = len(row_spans), len(col_spans)
    out = np.empty((nb, c, nr, nc))
    saved = []
    bi, ci = np.indices((nb, c))
    for i, (r0, r1) in enumerate(row_spans):
        for j, (c0, c1) in enumerate(col_spans):
            region = x4[:, :, r0:r1, c0:c1].reshape(nb, c, -1)
            if kind == "max":
                idx = region.argmax(axis=2)
                out[:, :, i, j] = region[bi, ci, idx]
                saved.append((i, j, r0, r1, c0, c1, idx))
            elif kind == "avg":
                out[:, :, i, j] = region.mean(axis=2)
                saved.append((i, j, r0, r1, c0, c1, None))
            else:
                raise UsageError(f"interval_pool: unknown kind {kind!r}")

    def vjp(g):
        g4 = g if batched else g[None]
        dx = np.zeros_like(x4)
        for i, j, r0, r1, c0, c1, idx in saved:
            width = c1 - c0
            if idx is None:
                count = (r1 - r0) * width
                dx[:, :, r0:r1, c0:c1] += (g4[:, :, i, j] / count)[:, :, None, None]
            else:
                rows = r0 + idx // width
                cols_ = c0 + idx % width
                np.add.at(dx, (bi, ci, rows, cols_), g4[:, :, i, j])
        return dx if batched else dx[0]

    return _emit(tape, "interval_pool", out if batched else out[0], [(x, vjp)])


def window_max_pool(tape, x, window, stride):
    """Max pooling over square windows, no padding; output floor((n-w)/s)+1 per axis."""
    xv = x.value
    batched = xv.ndim == 4
    if xv.ndim not in (3, 4):
        raise ShapeError(f"window_max_pool: expected [..., C, H, W], got {xv.shape}")
    h, w = xv.shape[-2:]
    if h < window or w < window:
        raise ShapeError(f"window_max_pool: window {window} exceeds input {h}x{w}")
    if window != stride:
        rows = [(i * stride, i * stride + window)
                for i in range((h - window) // stride + 1)]
        cols = [(j * stride, j * stride + window)
                for j in range((w - window) // stride + 1)]
        return interval_pool(tape, x, rows, cols, kind="max")

    # non-overlapping fast path: reshape into cells, argmax per cell
    x4 = xv if batched else xv[None]
    nb, c = x4.shape[:2]
    ho, wo = h // window, w // window
    cells = x4[:, :, :ho * window, :wo * window] \
        .reshape(nb, c, ho, window, wo, window).transpose(0, 1, 2, 4, 3, 5) \
        .reshape(nb, c, ho, wo, window * window)
    idx = cells.argmax(axis=4)
    out = np.take_along_axis(cells, idx[..., None], axis=4)[..., 0]

    def vjp(g):
        g4 = g if batched else g[None]
        dx = np.zeros_like(x4)
        bi, ci, hi, wi = np.indices(idx.shape)
        rows_ = hi * window + idx // window
        cols_ = wi * window + idx % window
        np.add.at(dx, (bi.ravel(), ci.ravel(), rows_.ravel(), cols_.ravel()), g4.ravel())
        return dx if batched else dx[0]

    return _emit(tape, "window_max_pool", out if batched else out[0], [(x, vjp)])


# ---------------------------------------------------------------------------
# batch normalization


def batchnorm(tape, x, gamma, beta, running_mean, running_var, mode,
              momentum=0.1, eps=1e-5, channel_axis=0):
    """Batch normalization over all axes except ``channel_axis``.

    mode "train": batch statistics, running buffers updated in place.
    mode "inner": batch statistics, buffers frozen (meta inner loops).
    mode "eval":  stored running statistics.
    """
    if mode not in MODES:
        raise UsageError(f"batchnorm: unknown mode {mode!r}")
    xv = x.value
    c = xv.shape[channel_axis]
    if gamma.value.shape != (c,) or beta.value.shape != (c,):
        raise ShapeError(
            f"batchnorm: gamma/beta shape {gamma.value.shape} does not match {c} channels")
    axes = tuple(i for i in range(xv.ndim) if i != channel_axis)
    m = int(np.prod([xv.shape[i] for i in axes])) if axes else 1
    bshape = [1] * xv.ndim
    bshape[channel_axis] = c

    def _b(v):
        return v.reshape(bshape)

    if mode == "eval":
        mean = running_mean.value
        var = running_var.value
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xv - _b(mean)) * _b(inv)
        out = _b(gamma.value) * xhat + _b(beta.value)
        vjps = [
            (x, lambda g: g * _b(gamma.value * inv)),
            (gamma, lambda g: (g * xhat).sum(axis=axes)),
            (beta, lambda g: g.sum(axis=axes)),
        ]
        return _emit(tape, "batchnorm", out, vjps)

    mean = xv.mean(axis=axes)
    var = xv.var(axis=axes)
    if mode == "train":
        running_mean.value = (1.0 - momentum) * running_mean.value + momentum * mean
        running_var.value = (1.0 - momentum) * running_var.value + momentum * var
    inv = 1.0 / np.sqrt(var + eps)
    xc = xv - _b(mean)
    xhat = xc * _b(inv)
    out = _b(gamma.value) * xhat + _b(beta.value)

    def vjp_x(g):
        dxhat = g * _b(gamma.value)
        dvar = np.sum(dxhat * xc, axis=axes) * (-0.5) * inv ** 3
        dmean = np.sum(dxhat, axis=axes) * (-inv) + dvar * np.sum(-2.0 * xc, axis=axes) / m
        return dxhat * _b(inv) + _b(dvar) * 2.0 * xc / m + _b(dmean) / m

    vjps = [
        (x, vjp_x),
        (gamma, lambda g: (g * xhat).sum(axis=axes)),
        (beta, lambda g: g.sum(axis=axes)),
    ]
    return _emit(tape, "batchnorm", out, vjps)


def instance_batchnorm(tape, x, gamma, beta, running_mean, running_var, mode,
                       momentum=0.1, eps=1e-5):
    """Batch norm with per-(sample, channel) spatial statistics.

    x: [B, C, H, W]. In "train"/"inner" mode each image is normalized by its
    own spatial statistics; "train" additionally folds the batch-averaged
    statistics into the running buffers. "eval" uses the running buffers.
    """
    if mode not in MODES:
        raise UsageError(f"instance_batchnorm: unknown mode {mode!r}")
    xv = x.value
    if xv.ndim != 4:
        raise ShapeError(f"instance_batchnorm: expected [B, C, H, W], got {xv.shape}")
    c = xv.shape[1]
    if gamma.value.shape != (c,) or beta.value.shape != (c,):
        raise ShapeError(
            f"instance_batchnorm: gamma/beta shape {gamma.value.shape} vs {c} channels")
    gb = gamma.value[None, :, None, None]

    if mode == "eval":
        inv = 1.0 / np.sqrt(running_var.value + eps)
        xhat = (xv - running_mean.value[None, :, None, None]) * inv[None, :, None, None]
        out = gb * xhat + beta.value[None, :, None, None]
        vjps = [
            (x, lambda g: g * (gamma.value * inv)[None, :, None, None]),
            (gamma, lambda g: (g * xhat).sum(axis=(0, 2, 3))),
            (beta, lambda g: g.sum(axis=(0, 2, 3))),
        ]
        return _emit(tape, "instance_batchnorm", out, vjps)

    m = xv.shape[2] * xv.shape[3]
    mean = xv.mean(axis=(2, 3))                        # [B, C]
    var = xv.var(axis=(2, 3))
    if mode == "train":
        running_mean.value = (1.0 - momentum) * running_mean.value \
            + momentum * mean.mean(axis=0)
        running_var.value = (1.0 - momentum) * running_var.value \
            + momentum * var.mean(axis=0)
    inv = 1.0 / np.sqrt(var + eps)                     # [B, C]
    xc = xv - mean[:, :, None, None]
    xhat = xc * inv[:, :, None, None]
    out = gb * xhat + beta.value[None, :, None, None]

    def vjp_x(g):
        dxhat = g * gb
        dvar = np.sum(dxhat * xc, axis=(2, 3)) * (-0.5) * inv ** 3
        dmean = np.sum(dxhat, axis=(2, 3)) * (-inv) \
            + dvar * np.sum(-2.0 * xc, axis=(2, 3)) / m
        return (dxhat * inv[:, :, None, None]
                + dvar[:, :, None, None] * 2.0 * xc / m
                + dmean[:, :, None, None] / m)

    vjps = [
        (x, vjp_x),
        (gamma, lambda g: (g * xhat).sum(axis=(0, 2, 3))),
        (beta, lambda g: g.sum(axis=(0, 2, 3))),
    ]
    return _emit(tape, "instance_batchnorm", out, vjps)
