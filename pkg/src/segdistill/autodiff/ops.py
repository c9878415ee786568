"""Differentiable operations over channel-last tensors.

Every op takes and returns :class:`Tensor` objects, computes its forward
value with numpy, and registers a backward rule on the active tape.
Spatial layout is always ``[N, H, W, C]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, record

PROB_FLOOR = 1e-7
BN_MOMENTUM = 0.9
BN_EPSILON = 1e-5

_ACTIVATIONS = ("relu", "relu6", "linear")


# -- padding helpers -------------------------------------------------------

def _same_pads(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _pads(h: int, w: int, kh: int, kw: int, stride: int, padding: str):
    if padding == "same":
        return _same_pads(h, kh, stride), _same_pads(w, kw, stride)
    if padding == "valid":
        return (0, 0), (0, 0)
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _check_window(h, w, kh, kw, ph, pw, stride, opname):
    if stride < 1:
        raise ValueError(f"{opname}: stride must be >= 1, got {stride}")
    if kh > h + sum(ph) or kw > w + sum(pw):
        raise ShapeError(
            f"{opname}: kernel {kh}x{kw} larger than padded input {h + sum(ph)}x{w + sum(pw)}"
        )


def _colsum(a: np.ndarray) -> np.ndarray:
    """Sum over every axis but the last, as a BLAS matrix-vector product."""
    a2 = a.reshape(-1, a.shape[-1])
    return np.ones(a2.shape[0], dtype=a.dtype) @ a2


def _lastsum(a: np.ndarray) -> np.ndarray:
    """Sum over the last axis, keeping it as length 1."""
    return (a @ np.ones(a.shape[-1], dtype=a.dtype))[..., None]


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    """Broadcasting add; scalar or same-shape operands."""
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", (a, b), out, bwd)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = Tensor(a.data * b.data)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record("mul", (a, b), out, bwd)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype))

    def bwd(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return record("sum", (x,), out, bwd)


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    out = Tensor(np.asarray(x.data.mean(dtype=np.float64), dtype=x.dtype))

    def bwd(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return record("mean", (x,), out, bwd)


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def bwd(g):
        return (g.reshape(x.shape),)

    return record("reshape", (x,), out, bwd)


def residual_add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shaped tensors (shortcut connection)."""
    if a.shape != b.shape:
        raise ShapeError(f"residual_add: shapes differ, {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    return record("residual_add", (a, b), out, lambda g: (g, g))


def activation(x: Tensor, kind: str = "relu") -> Tensor:
    """relu, relu6 (clipped at 6) or linear; the subgradient at a kink is 0."""
    if kind == "linear":
        return x
    if kind == "relu":
        mask = x.data > 0
        out = Tensor(np.where(mask, x.data, 0).astype(x.dtype))
    elif kind == "relu6":
        mask = (x.data > 0) & (x.data < 6)
        out = Tensor(np.clip(x.data, 0, 6))
    else:
        raise ValueError(f"unknown activation {kind!r}; expected one of {_ACTIVATIONS}")

    def bwd(g):
        return (g * mask,)

    return record(kind, (x,), out, bwd)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis; channels of ``a`` come first."""
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(
            f"concat_channels: leading extents differ, {a.shape} vs {b.shape}"
        )
    ca = a.shape[-1]
    out = Tensor(np.concatenate([a.data, b.data], axis=-1))

    def bwd(g):
        return g[..., :ca], g[..., ca:]

    return record("concat_channels", (a, b), out, bwd)


# -- linear layers ---------------------------------------------------------

def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """``x @ weights + bias`` for ``x`` of shape ``[N, Din]``."""
    if x.data.ndim != 2 or weights.data.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense: input {x.shape} incompatible with weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} does not match weights {weights.shape}")
    out = Tensor(x.data @ weights.data + bias.data)

    def bwd(g):
        return g @ weights.data.T, x.data.T @ g, _colsum(g)

    return record("dense", (x, weights, bias), out, bwd)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: str = "same") -> Tensor:
    """2-D cross-correlation. ``kernel`` is ``[kh, kw, Cin, Cout]``.

    ``same`` padding follows the usual split (extra pad on the bottom/right),
    giving ``ceil(H / stride)`` outputs.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, h, w, cin = x.shape
    kh, kw, kcin, cout = kernel.shape
    if kcin != cin:
        raise ShapeError(
            f"conv2d: input channels {cin} (input shape {x.shape}) != kernel in-channels "
            f"{kcin} (kernel shape {kernel.shape})"
        )
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match Cout={cout}")
    ph, pw = _pads(h, w, kh, kw, stride, padding)
    _check_window(h, w, kh, kw, ph, pw, stride, "conv2d")
    xp = np.pad(x.data, ((0, 0), ph, pw, (0, 0))) if (sum(ph) or sum(pw)) else x.data
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    k = kernel.data

    # per-tap matmuls beat an im2col copy at these channel counts
    if kh == 1 and kw == 1:
        xs = xp[:, : stride * ho : stride, : stride * wo : stride, :]
        out = xs.reshape(-1, cin) @ k[0, 0]
    else:
        out = np.zeros((n * ho * wo, cout), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                xs = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
                out += xs.reshape(-1, cin) @ k[i, j]
    out = out.reshape(n, ho, wo, cout)
    if bias is not None:
        out = out + bias.data
    result = Tensor(out)

    def bwd(g):
        g2 = g.reshape(-1, cout)
        if kh == 1 and kw == 1 and stride == 1:
            x2 = x.data.reshape(-1, cin)
            grads = [(g2 @ k[0, 0].T).reshape(x.shape), (x2.T @ g2).reshape(k.shape)]
        else:
            gk = np.empty_like(k)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    sl = (slice(None), slice(i, i + stride * ho, stride),
                          slice(j, j + stride * wo, stride), slice(None))
                    gk[i, j] = xp[sl].reshape(-1, cin).T @ g2
                    gxp[sl] += (g2 @ k[i, j].T).reshape(n, ho, wo, cin)
            grads = [gxp[:, ph[0] : ph[0] + h, pw[0] : pw[0] + w, :], gk]
        if bias is not None:
            grads.append(_colsum(g2))
        return grads

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv2d", inputs, result, bwd)


def depthwise_conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: str = "same") -> Tensor:
    """Per-channel convolution; ``kernel`` is ``[kh, kw, C]``."""
    if x.data.ndim != 4 or kernel.data.ndim != 3:
        raise ShapeError(
            f"depthwise_conv2d: expected 4-D input and 3-D kernel, got {x.shape} and {kernel.shape}"
        )
    n, h, w, c = x.shape
    kh, kw, kc = kernel.shape
    if kc != c:
        raise ShapeError(
            f"depthwise_conv2d: input channels {c} (input shape {x.shape}) != kernel channels "
            f"{kc} (kernel shape {kernel.shape})"
        )
    ph, pw = _pads(h, w, kh, kw, stride, padding)
    _check_window(h, w, kh, kw, ph, pw, stride, "depthwise_conv2d")
    xp = np.pad(x.data, ((0, 0), ph, pw, (0, 0))) if (sum(ph) or sum(pw)) else x.data
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    k = kernel.data
    out = np.zeros((n, ho, wo, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] * k[i, j]
    result = Tensor(out)

    def bwd(g):
        gk = np.empty_like(k)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None), slice(i, i + stride * ho, stride),
                      slice(j, j + stride * wo, stride), slice(None))
                gk[i, j] = _colsum(xp[sl] * g)
                gxp[sl] += g * k[i, j]
        return gxp[:, ph[0] : ph[0] + h, pw[0] : pw[0] + w, :], gk

    return record("depthwise_conv2d", (x, kernel), result, bwd)


def transpose_conv2d(x: Tensor, kernel: Tensor, stride: int = 2, bias: Tensor | None = None) -> Tensor:
    """Strided transposed convolution producing exactly ``stride`` x the input extents.

    ``kernel`` is ``[kh, kw, Cout, Cin]``. Each input pixel scatters
    ``v * kernel`` into the output at offset ``(y*stride, x*stride)``;
    overlaps sum. The full scatter canvas is cropped starting at
    ``max(k - stride, 0) // 2`` and zero-extended if the kernel is smaller
    than the stride.
    """
    if stride < 1:
        raise ValueError(f"transpose_conv2d: stride must be >= 1, got {stride}")
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(
            f"transpose_conv2d: expected 4-D input and kernel, got {x.shape} and {kernel.shape}"
        )
    n, h, w, cin = x.shape
    kh, kw, cout, kcin = kernel.shape
    if kcin != cin:
        raise ShapeError(
            f"transpose_conv2d: input channels {cin} (input shape {x.shape}) != kernel in-channels "
            f"{kcin} (kernel shape {kernel.shape})"
        )
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"transpose_conv2d: bias {bias.shape} does not match Cout={cout}")
    k = kernel.data
    fh = max((h - 1) * stride + kh, h * stride)
    fw = max((w - 1) * stride + kw, w * stride)
    oh, ow = h * stride, w * stride
    top = max(kh - stride, 0) // 2
    left = max(kw - stride, 0) // 2
    x2 = x.data.reshape(-1, cin)
    full = np.zeros((n, fh, fw, cout), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, i : i + stride * h : stride, j : j + stride * w : stride, :] += (
                x2 @ k[i, j].T
            ).reshape(n, h, w, cout)
    out = full[:, top : top + oh, left : left + ow, :]
    if bias is not None:
        out = out + bias.data
    result = Tensor(out)

    def bwd(g):
        gfull = np.zeros((n, fh, fw, cout), dtype=g.dtype)
        gfull[:, top : top + oh, left : left + ow, :] = g
        gx = np.zeros((n * h * w, cin), dtype=g.dtype)
        gk = np.empty_like(k)
        for i in range(kh):
            for j in range(kw):
                gs = gfull[:, i : i + stride * h : stride, j : j + stride * w : stride, :].reshape(-1, cout)
                gx += gs @ k[i, j]
                gk[i, j] = gs.T @ x2
        grads = [gx.reshape(x.shape), gk]
        if bias is not None:
            grads.append(_colsum(g))
        return grads

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("transpose_conv2d", inputs, result, bwd)


# -- normalisation and pooling -----------------------------------------------

@dataclass
class RunningStats:
    """Per-channel running mean/variance used by batch norm at inference."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = BN_MOMENTUM
    epsilon: float = BN_EPSILON

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32) -> "RunningStats":
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batch_norm(x: Tensor, scale: Tensor, shift: Tensor, stats: RunningStats,
               mode: str = "train") -> Tensor:
    """Normalise over every axis but the last.

    ``train`` uses batch statistics and updates ``stats`` in place;
    ``infer`` uses ``stats`` only.
    """
    c = x.shape[-1]
    if scale.shape != (c,) or shift.shape != (c,) or stats.mean.shape != (c,):
        raise ShapeError(
            f"batch_norm: channel count {c} of input {x.shape} does not match "
            f"scale {scale.shape} / shift {shift.shape} / stats {stats.mean.shape}"
        )
    if stats.epsilon <= 0:
        raise ValueError("batch_norm: epsilon must be positive")
    count = x.size // c
    if mode == "train":
        mu = _colsum(x.data) / count
        centered = x.data - mu
        var = _colsum(centered * centered) / count
        m = stats.momentum
        stats.mean = (m * stats.mean + (1 - m) * mu).astype(stats.mean.dtype)
        stats.var = (m * stats.var + (1 - m) * var).astype(stats.var.dtype)
    elif mode == "infer":
        mu, var = stats.mean, stats.var
        centered = x.data - mu
    else:
        raise ValueError(f"batch_norm: mode must be 'train' or 'infer', got {mode!r}")
    inv = (1.0 / np.sqrt(var + stats.epsilon)).astype(x.dtype)
    xhat = centered * inv
    out = Tensor(xhat * scale.data + shift.data)

    def bwd(g):
        gscale = _colsum(g * xhat)
        gshift = _colsum(g)
        if mode == "infer":
            return (g * (scale.data * inv)).astype(x.dtype), gscale, gshift
        k = scale.data * inv / count
        gx = k * (count * g - gshift - xhat * gscale)
        return gx.astype(x.dtype), gscale, gshift

    return record("batch_norm", (x, scale, shift), out, bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected [N,H,W,C], got {x.shape}")
    n, h, w, c = x.shape
    out = Tensor(x.data.mean(axis=(1, 2)))

    def bwd(g):
        return (np.broadcast_to(g[:, None, None, :] / (h * w), x.shape).astype(x.dtype),)

    return record("global_avg_pool", (x,), out, bwd)


# -- probabilities and loss --------------------------------------------------

def softmax(logits: Tensor) -> Tensor:
    """Softmax over the last axis with max-subtraction."""
    if logits.shape[-1] < 2:
        raise ShapeError(f"softmax: need at least 2 classes, got shape {logits.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / _lastsum(e)
    out = Tensor(p)

    def bwd(g):
        return (p * (g - _lastsum(g * p)),)

    return record("softmax", (logits,), out, bwd)


def check_one_hot(target: np.ndarray) -> None:
    ok_values = np.all((target == 0) | (target == 1))
    if not ok_values or not np.all(target.sum(axis=-1) == 1):
        raise ValueError("target is not one-hot: every class-axis slice needs exactly one 1")


def categorical_cross_entropy(probs: Tensor, target, floor: float = PROB_FLOOR,
                              validate: bool = True) -> Tensor:
    """Mean over observations of ``-sum_c y_c * log(max(p_c, floor))``.

    Observations are all leading positions, so per-pixel targets are
    averaged over both batch and pixels.
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if t.shape != probs.shape:
        raise ShapeError(f"categorical_cross_entropy: probs {probs.shape} vs target {t.shape}")
    if validate:
        check_one_hot(t)
    t = t.astype(probs.dtype, copy=False)
    p = probs.data
    clipped = np.maximum(p, floor)
    n_obs = p.size // p.shape[-1]
    total = -(t * np.log(clipped)).sum(dtype=np.float64)
    out = Tensor(np.asarray(total / n_obs, dtype=probs.dtype))

    def bwd(g):
        return (np.where(p >= floor, -t / clipped, 0).astype(p.dtype) * (g / n_obs),)

    return record("categorical_cross_entropy", (probs,), out, bwd)


def one_hot(labels: np.ndarray, classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ValueError(f"labels outside 0..{classes - 1}")
    return np.eye(classes, dtype=dtype)[labels]


__all__ = [
    "PROB_FLOOR", "RunningStats", "activation", "add", "batch_norm", "categorical_cross_entropy",
    "check_one_hot", "concat_channels", "conv2d", "dense", "depthwise_conv2d", "global_avg_pool",
    "mean_all", "mul", "one_hot", "reshape", "residual_add", "softmax", "sum_all",
    "transpose_conv2d",
]
