"""Convolution, pooling and normalization kernels (NCHW layout)."""
from __future__ import annotations

import numpy as np

from .core import Tensor, make_output


class ConfigurationError(ValueError):
    """Op arguments that cannot describe a valid layer."""


BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _im2col(x: np.ndarray, k: int, stride: int, padding: int, ho: int, wo: int) -> np.ndarray:
    """Columns laid out (Cin, k, k, B, Ho, Wo) so every copy moves whole rows."""
    b, c, h, w = x.shape
    if padding:
        xp = np.zeros((c, b, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        xp[:, :, padding:padding + h, padding:padding + w] = x.transpose(1, 0, 2, 3)
    else:
        xp = x.transpose(1, 0, 2, 3)
    cols = np.empty((c, k, k, b, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(c * k * k, b * ho * wo)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (B,Cin,H,W) with ``kernel`` (Cout,Cin,k,k)."""
    if x.ndim != 4:
        raise ConfigurationError(f"conv2d input must be 4-D, got shape {x.shape}")
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ConfigurationError(f"conv2d kernel must be Cout x Cin x k x k, got {kernel.shape}")
    b, cin, h, w = x.shape
    cout, kcin, k, _ = kernel.shape
    if kcin != cin:
        raise ConfigurationError(f"conv2d input channels: input has {cin}, kernel expects {kcin}")
    if bias is not None and bias.shape != (cout,):
        raise ConfigurationError(f"conv2d bias length {bias.shape} does not match output channels {cout}")
    if stride < 1:
        raise ConfigurationError(f"conv2d stride must be >= 1, got {stride}")
    for size, label in ((h, "height"), (w, "width")):
        span = size + 2 * padding - k
        if span < 0:
            raise ConfigurationError(f"conv2d {label} {size} with padding {padding} is smaller than kernel {k}")
        if span % stride:
            raise ConfigurationError(f"conv2d {label} {size}: (size + 2*padding - k) not divisible by stride {stride}")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1

    if stride == 1 and k > 1:
        out, back = _conv_shift(x, kernel, bias, padding, ho, wo)
    else:
        out, back = _conv_cols(x, kernel, bias, stride, padding, ho, wo)
    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return make_output("conv2d", inputs, out, back)


def _conv_cols(x, kernel, bias, stride, padding, ho, wo):
    b, cin, h, w = x.shape
    cout, _, k, _ = kernel.shape
    if k == 1 and stride == 1 and padding == 0:
        cols = x.data.transpose(1, 0, 2, 3).reshape(cin, -1)
    else:
        cols = _im2col(x.data, k, stride, padding, ho, wo)
    wmat = kernel.data.reshape(cout, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(cout, b, ho, wo).transpose(1, 0, 2, 3))

    def back(g):
        gm = g.transpose(1, 0, 2, 3).reshape(cout, -1)
        gk = (gm @ cols.T).reshape(kernel.shape) if kernel.requires_grad else None
        gb = gm.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gm).reshape(cin, k, k, b, ho, wo)
            gxp = np.zeros((cin, b, h + 2 * padding, w + 2 * padding), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + w].transpose(1, 0, 2, 3)
        return gx, gk, gb

    return out, back


def _conv_shift(x, kernel, bias, padding, ho, wo):
    """Stride-1 convolution on the flattened padded grid.

    With the padded input flattened per channel, kernel tap (i, j) is a plain
    offset ``i*Wp + j``.  One matmul against all taps stacked, then one
    shifted add per tap; outputs at grid positions past the valid window are
    discarded.
    """
    b, cin, h, w = x.shape
    cout, _, k, _ = kernel.shape
    hp, wp = h + 2 * padding, w + 2 * padding
    total = b * hp * wp
    span = total - ((k - 1) * wp + (k - 1))
    offsets = [i * wp + j for i in range(k) for j in range(k)]
    xp = np.zeros((cin, b, hp, wp), dtype=x.dtype)
    xp[:, :, padding:padding + h, padding:padding + w] = x.data.transpose(1, 0, 2, 3)
    xf = xp.reshape(cin, total)
    taps = kernel.data.transpose(2, 3, 0, 1).reshape(k * k * cout, cin)
    full = taps @ xf
    acc = np.zeros((cout, total), dtype=full.dtype)
    for t, off in enumerate(offsets):
        acc[:, :span] += full[t * cout:(t + 1) * cout, off:off + span]
    if bias is not None:
        acc += bias.data[:, None]
    out = np.ascontiguousarray(acc.reshape(cout, b, hp, wp)[:, :, :ho, :wo].transpose(1, 0, 2, 3))

    def back(g):
        gf = np.zeros((cout, b, hp, wp), dtype=g.dtype)
        gf[:, :, :ho, :wo] = g.transpose(1, 0, 2, 3)
        gf = gf.reshape(cout, total)
        gk = gb = gx = None
        if kernel.requires_grad:
            cols = np.empty((k * k, cin, span), dtype=xf.dtype)
            for t, off in enumerate(offsets):
                cols[t] = xf[:, off:off + span]
            gk = (gf[:, :span] @ cols.reshape(k * k * cin, span).T).reshape(cout, k, k, cin).transpose(0, 3, 1, 2)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            taps_t = kernel.data.transpose(2, 3, 1, 0).reshape(k * k * cin, cout)
            back_full = taps_t @ gf
            gxf = np.zeros((cin, total), dtype=g.dtype)
            for t, off in enumerate(offsets):
                gxf[:, off:off + span] += back_full[t * cin:(t + 1) * cin, :span]
            gx = gxf.reshape(cin, b, hp, wp)[:, :, padding:padding + h, padding:padding + w].transpose(1, 0, 2, 3)
        return gx, gk, gb

    return out, back


def conv_transpose2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 2) -> Tensor:
    """2x2 stride-2 transposed convolution; ``kernel`` is (Cin,Cout,2,2)."""
    if kernel.ndim != 4 or kernel.shape[2:] != (2, 2) or stride != 2:
        raise ConfigurationError(
            f"conv_transpose2d supports only 2x2 kernels with stride 2 (kernel {kernel.shape}, stride {stride})")
    if x.ndim != 4:
        raise ConfigurationError(f"conv_transpose2d input must be 4-D, got shape {x.shape}")
    b, cin, h, w = x.shape
    if kernel.shape[0] != cin:
        raise ConfigurationError(f"conv_transpose2d input channels: input has {cin}, kernel expects {kernel.shape[0]}")
    cout = kernel.shape[1]
    if bias is not None and bias.shape != (cout,):
        raise ConfigurationError(f"conv_transpose2d bias length {bias.shape} does not match output channels {cout}")

    xm = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
    kmat = kernel.data.reshape(cin, cout * 4)
    y = (xm @ kmat).reshape(b, h, w, cout, 2, 2)
    out = y.transpose(0, 3, 1, 4, 2, 5).reshape(b, cout, 2 * h, 2 * w)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    else:
        out = np.ascontiguousarray(out)

    def back(g):
        gy = g.reshape(b, cout, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5).reshape(-1, cout * 4)
        gx = (gy @ kmat.T).reshape(b, h, w, cin).transpose(0, 3, 1, 2) if x.requires_grad else None
        gk = (xm.T @ gy).reshape(kernel.shape) if kernel.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gk, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return make_output("conv_transpose2d", inputs, out, back)


def maxpool2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max pooling.  Ties route gradient to the first
    maximum in row-major window order."""
    if x.ndim != 4:
        raise ConfigurationError(f"maxpool2x2 input must be 4-D, got shape {x.shape}")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigurationError(f"maxpool2x2 needs even height and width, got {h}x{w}")
    win = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def back(g):
        gw = np.zeros((b, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = gw.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (gx,)

    return make_output("maxpool2x2", (x,), out, back)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: Tensor, running_var: Tensor,
                train: bool, momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalization.

    In train mode the batch statistics (biased variance) are used and the
    running buffers are updated in place; eval mode reads the buffers.
    """
    if x.ndim != 4:
        raise ConfigurationError(f"batchnorm2d input must be 4-D, got shape {x.shape}")
    b, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ConfigurationError(f"batchnorm2d affine params must have {c} channels, got {gamma.shape}/{beta.shape}")
    n = b * h * w
    shape = (1, c, 1, 1)
    if train:
        if n < 2:
            raise ConfigurationError("batchnorm2d in train mode needs at least 2 values per channel (B*H*W >= 2)")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean.data[...] = (1.0 - momentum) * running_mean.data + momentum * mu
        running_var.data[...] = (1.0 - momentum) * running_var.data + momentum * var
    else:
        mu = running_mean.data
        var = running_var.data
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape)) * inv.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def back(g):
        gg = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(shape)
            if train:
                s1 = dxhat.sum(axis=(0, 2, 3)).reshape(shape)
                s2 = (dxhat * xhat).sum(axis=(0, 2, 3)).reshape(shape)
                gx = (inv.reshape(shape) / n) * (n * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * inv.reshape(shape)
        return gx, gg, gb

    return make_output("batchnorm2d", (x, gamma, beta), out, back)
