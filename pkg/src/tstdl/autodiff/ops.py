"""Differentiable operators.

Only what the reconstruction networks and their losses need: dense and
convolutional layers, U-Net plumbing (pooling, upsampling, skip concatenation),
activations, dropout, batch normalization, and the elementwise arithmetic used
by the RMSE and SSIM losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import DimensionError, ParameterError
from .tensor import Tensor, make_node


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _lift_scalar(a: Tensor, b) -> Tensor:
    # plain Python scalars adopt the dtype of the tensor operand
    if isinstance(b, Tensor):
        return b
    return Tensor(np.asarray(b, dtype=a.dtype))


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------------

def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    a = as_tensor(a)
    b = _lift_scalar(a, b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b), "add",
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    if isinstance(a, Tensor):
        b = _lift_scalar(a, b)
    else:
        b = as_tensor(b)
        a = _lift_scalar(b, a)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b), "sub",
                     lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _lift_scalar(a, b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return make_node(ad * bd, (a, b), "mul",
                     lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    if isinstance(a, Tensor):
        b = _lift_scalar(a, b)
    else:
        b = as_tensor(b)
        a = _lift_scalar(b, a)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd

    def back(g):
        return (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape))

    return make_node(out, (a, b), "div", back)


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), "neg", lambda g: (-g,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return make_node(ad * ad, (a,), "square", lambda g: (2.0 * ad * g,))


def sqrt(a: Tensor, floor: float = 1e-12) -> Tensor:
    """Square root. The backward pass floors the denominator at ``floor``
    so that sqrt(0) stays differentiable inside the RMSE loss."""
    out = np.sqrt(a.data)
    return make_node(out, (a,), "sqrt",
                     lambda g: (g / (2.0 * np.maximum(out, floor)),))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(np.asarray(out, dtype=a.dtype), (a,), "sum", back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ----------------------------------------------------------------------------
# linear algebra and shape manipulation
# ----------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product ``a @ b``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return make_node(ad @ bd, (a, b), "matmul", back)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Dense layer ``x @ weight.T + bias`` for a batch ``x`` of shape (B, in)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return make_node(out, parents, "linear", back)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    orig = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {orig} to {shape}") from None
    return make_node(out, (a,), "reshape", lambda g: (g.reshape(orig),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"permute axes {axes} invalid for rank {a.ndim}")
    inverse = tuple(np.argsort(axes))
    return make_node(np.ascontiguousarray(a.data.transpose(axes)), (a,), "permute",
                     lambda g: (g.transpose(inverse),))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two NCHW tensors along the channel axis."""
    if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise DimensionError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    ca = a.shape[1]
    return make_node(np.concatenate([a.data, b.data], axis=1), (a, b), "concat",
                     lambda g: (g[:, :ca], g[:, ca:]))


# ----------------------------------------------------------------------------
# activations and regularization
# ----------------------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_node(a.data * mask, (a,), "relu", lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    scale = np.where(a.data > 0, 1.0, slope).astype(a.dtype)
    return make_node(a.data * scale, (a,), "leaky_relu", lambda g: (g * scale,))


def dropout(a: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout: kept units are scaled by 1/(1-p) during training."""
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ParameterError("dropout in training mode needs a random generator")
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)
    return make_node(a.data * keep, (a,), "dropout", lambda g: (g * keep,))


@dataclass
class RunningStats:
    """Per-channel running mean/variance buffers for batch normalization."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    count: int = field(default=0)

    @classmethod
    def zeros(cls, channels: int, dtype=np.float32, momentum: float = 0.1) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype), momentum)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running: RunningStats,
              training: bool, eps: float = 1e-8) -> Tensor:
    """Batch normalization over (B, C) or (B, C, H, W) inputs.

    Training mode normalizes with the batch statistics and updates
    ``running`` in place; inference mode uses ``running``.
    """
    if x.ndim == 2:
        axes, bshape = (0,), (1, -1)
    elif x.ndim == 4:
        axes, bshape = (0, 2, 3), (1, -1, 1, 1)
    else:
        raise DimensionError(f"batchnorm expects rank 2 or 4 input, got {x.shape}")
    n = int(np.prod([x.shape[a] for a in axes]))
    xd = x.data
    g = gamma.data.reshape(bshape)
    b = beta.data.reshape(bshape)
    if training:
        if x.shape[0] < 2:
            raise ParameterError("batchnorm in training mode needs a batch of at least 2")
        mu = xd.mean(axis=axes, keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        m = running.momentum
        unbiased = var.reshape(-1) * (n / max(n - 1, 1))
        running.mean[...] = (1 - m) * running.mean + m * mu.reshape(-1)
        running.var[...] = (1 - m) * running.var + m * unbiased
        running.count += 1

        def back(gout):
            gg = (gout * xhat).sum(axis=axes)
            gb = gout.sum(axis=axes)
            gxhat = gout * g
            gx = None
            if x.requires_grad:
                gx = inv / n * (n * gxhat - gxhat.sum(axis=axes, keepdims=True)
                                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
            return gx, gg.astype(gamma.dtype), gb.astype(beta.dtype)
    else:
        mu = running.mean.reshape(bshape).astype(xd.dtype)
        inv = (1.0 / np.sqrt(running.var.reshape(bshape) + eps)).astype(xd.dtype)
        xhat = (xd - mu) * inv

        def back(gout):
            return gout * g * inv, (gout * xhat).sum(axis=axes), gout.sum(axis=axes)

    out = xhat * g + b
    return make_node(out.astype(xd.dtype, copy=False), (x, gamma, beta), "batchnorm", back)


# ----------------------------------------------------------------------------
# convolutional plumbing (NCHW)
# ----------------------------------------------------------------------------

def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           padding: str = "same") -> Tensor:
    """Stride-1 cross-correlation of NCHW ``x`` with an (F, C, kh, kw) kernel.

    ``padding="same"`` zero-pads so H and W are preserved (kernel sides must be
    odd); ``padding="valid"`` applies no padding.

    Internally the padded input is laid out channels-last and flattened to
    rows, so each kernel tap is one matmul over a contiguous row slice
    (offset i*Wp + j). Rows that straddle an image border produce values
    that are simply never read back.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects NCHW input and FCkk kernel, got {x.shape}, {kernel.shape}")
    B, C, H, W = x.shape
    F, Ck, kh, kw = kernel.shape
    if Ck != C:
        raise DimensionError(f"conv2d channel mismatch: input has {C}, kernel expects {Ck}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ParameterError(f"'same' padding needs odd kernel sides, got {kh}x{kw}")
        ph, pw = kh // 2, kw // 2
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ParameterError(f"unknown padding {padding!r}")
    Hp, Wp = H + 2 * ph, W + 2 * pw
    Ho, Wo = Hp - kh + 1, Wp - kw + 1
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"conv2d kernel {kh}x{kw} larger than padded input {(Hp, Wp)}")
    dt = x.dtype
    xp = np.zeros((B, Hp, Wp, C), dtype=dt)
    xp[:, ph:ph + H, pw:pw + W] = x.data.transpose(0, 2, 3, 1)
    X = xp.reshape(-1, C)
    R = X.shape[0]
    L = R - (kh - 1) * Wp - (kw - 1)
    taps = [(i, j, i * Wp + j) for i in range(kh) for j in range(kw)]
    Wk = np.ascontiguousarray(kernel.data.transpose(2, 3, 1, 0))  # kh, kw, C, F
    acc = np.zeros((R, F), dtype=np.result_type(dt, kernel.dtype))
    for i, j, off in taps:
        acc[:L] += X[off:off + L] @ Wk[i, j]
    out = acc.reshape(B, Hp, Wp, F)[:, :Ho, :Wo]
    if bias is not None:
        out = out + bias.data
    out = out.transpose(0, 3, 1, 2)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def back(g):
        G = np.zeros((R, F), dtype=g.dtype)
        G.reshape(B, Hp, Wp, F)[:, :Ho, :Wo] = g.transpose(0, 2, 3, 1)
        GL = G[:L]
        gk = None
        if kernel.requires_grad:
            gw = np.empty((kh, kw, C, F), dtype=kernel.dtype)
            for i, j, off in taps:
                gw[i, j] = X[off:off + L].T @ GL
            gk = gw.transpose(3, 2, 0, 1)
        gx = None
        if x.requires_grad:
            GX = np.zeros((R, C), dtype=dt)
            for i, j, off in taps:
                GX[off:off + L] += GL @ Wk[i, j].T
            gx = GX.reshape(B, Hp, Wp, C)[:, ph:ph + H, pw:pw + W].transpose(0, 3, 1, 2)
        gb = g.sum(axis=(0, 2, 3))
        if bias is None:
            return gx, gk
        return gx, gk, gb

    return make_node(np.ascontiguousarray(out), parents, "conv2d", back)


def maxpool2(x: Tensor) -> Tuple[Tensor, np.ndarray]:
    """2x2 max pooling with stride 2.

    Returns the pooled tensor and the flat within-window argmax (0..3) of
    every output element; ties resolve to the first maximum.
    """
    if x.ndim != 4:
        raise DimensionError(f"maxpool2 expects NCHW input, got {x.shape}")
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise DimensionError(f"maxpool2 needs even spatial extents, got {H}x{W}")
    blocks = x.data.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(B, C, H // 2, W // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros(blocks.shape, dtype=x.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gb.reshape(B, C, H, W),)

    return make_node(out, (x,), "maxpool2", back), idx


def upsample_nn(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling of the two spatial axes."""
    if x.ndim != 4:
        raise DimensionError(f"upsample_nn expects NCHW input, got {x.shape}")
    if factor < 1:
        raise ParameterError(f"upsampling factor must be >= 1, got {factor}")
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    return make_node(out, (x,), "upsample_nn",
                     lambda g: (g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)),))
