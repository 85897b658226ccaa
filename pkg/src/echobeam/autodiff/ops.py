"""Forward/backward kernels for the network operations.

Each ``*_fwd`` returns ``(output, cache)``; the matching ``*_bwd`` takes the
cache and the upstream gradient and returns input gradients.

The network runs channels-last: images are ``[height, width, channels]`` and
kernels ``[k, k, c_in, c_out]``, which keeps every convolution GEMM in the
orientation BLAS handles well. :func:`conv2d_fwd` / :func:`conv2d_bwd` offer
the channels-first ``x [C, H, W]``, ``kernels [C', C, k, k]`` interface on top.
"""
import numpy as np

from echobeam import kernels
from echobeam.errors import ConfigurationError, ShapeError


def _im2col(x, k):
    """``[H, W, C]`` -> ``[H*W, k*k*C]`` patches of the zero-padded input."""
    h, w, c = x.shape
    if k == 1:
        return x.reshape(h * w, c)
    cols = np.empty((h * w, k * k * c), dtype=x.dtype)
    kernels.im2col(np.ascontiguousarray(x), k, cols)
    return cols


def _check_conv(x, kernels, bias):
    if x.ndim != 3 or kernels.ndim != 4:
        raise ShapeError(f"conv expects x [H,W,C] and kernels [k,k,C,C'], got "
                         f"{x.shape} and {kernels.shape}")
    k, k2, c_in, c_out = kernels.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {k}x{k2}")
    if c_in != x.shape[2]:
        raise ShapeError(f"kernel expects {c_in} input channels, x has {x.shape[2]}")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape}, expected ({c_out},)")


def conv_hwc_fwd(x, kernels, bias):
    """'Same'-padded stride-1 cross-correlation, channels-last."""
    _check_conv(x, kernels, bias)
    h, w, _ = x.shape
    k, _, _, c_out = kernels.shape
    cols = _im2col(x, k)
    y = cols @ kernels.reshape(-1, c_out)
    y += bias
    return y.reshape(h, w, c_out), (cols, kernels)


def conv_hwc_bwd(cache, gy):
    cols, kernels = cache
    k, _, c_in, c_out = kernels.shape
    g2 = gy.reshape(-1, c_out)
    gk = (cols.T @ g2).reshape(kernels.shape)
    gb = g2.sum(axis=0)
    # input gradient of a same-padded stride-1 correlation: correlate the
    # output gradient with the flipped, channel-transposed kernel
    flipped = np.ascontiguousarray(kernels[::-1, ::-1].transpose(0, 1, 3, 2))
    gx = (_im2col(gy, k) @ flipped.reshape(-1, c_in)).reshape(gy.shape[:2] + (c_in,))
    return gx, gk, gb


def conv2d_fwd(x, kernels, bias):
    """Channels-first wrapper: ``x [C, H, W]``, ``kernels [C', C, k, k]``, ``bias [C']``."""
    if x.ndim != 3 or kernels.ndim != 4:
        raise ShapeError(f"conv2d expects x [C,H,W] and kernels [C',C,k,k], got "
                         f"{x.shape} and {kernels.shape}")
    y, cache = conv_hwc_fwd(np.ascontiguousarray(x.transpose(1, 2, 0)),
                            np.ascontiguousarray(kernels.transpose(2, 3, 1, 0)), bias)
    return np.ascontiguousarray(y.transpose(2, 0, 1)), cache


def conv2d_bwd(cache, gy):
    gx, gk, gb = conv_hwc_bwd(cache, np.ascontiguousarray(gy.transpose(1, 2, 0)))
    return gx.transpose(2, 0, 1), gk.transpose(3, 2, 0, 1), gb


def leaky_relu_fwd(x, slope=0.1):
    if not 0.0 <= slope <= 1.0:
        raise ConfigurationError(f"leaky-ReLU slope must lie in [0, 1], got {slope}")
    s = np.asarray(slope, x.dtype)
    y = x * s
    np.maximum(x, y, out=y)
    return y, (x > 0, s)


def leaky_relu_bwd(cache, gy):
    pos, s = cache
    # derivative is 1 on the positive side and ``slope`` elsewhere
    mult = pos.astype(gy.dtype)
    mult *= 1 - s
    mult += s
    return gy * mult


def maxpool2_fwd(x):
    """2x2 max pooling over the two leading (spatial) axes.

    Ties route to the first maximum in row-major scan order of the window.
    """
    h, w = x.shape[:2]
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even height and width, got {h}x{w}")
    rest = x.shape[2:]
    blocks = x.reshape((h // 2, 2, w // 2, 2) + rest).swapaxes(1, 2)
    blocks = blocks.reshape((h // 2, w // 2, 4) + rest)
    idx = blocks.argmax(axis=2)
    y = np.take_along_axis(blocks, idx[:, :, None], axis=2)[:, :, 0]
    return y, (idx, x.shape)


def maxpool2_bwd(cache, gy):
    idx, shape = cache
    h, w = shape[:2]
    rest = shape[2:]
    g4 = np.zeros((h // 2, w // 2, 4) + rest, dtype=gy.dtype)
    np.put_along_axis(g4, idx[:, :, None], gy[:, :, None], axis=2)
    return g4.reshape((h // 2, w // 2, 2, 2) + rest).swapaxes(1, 2).reshape(shape)


def upsample2_fwd(x):
    """Nearest-neighbour 2x upsampling of the two leading axes."""
    return x.repeat(2, axis=0).repeat(2, axis=1), x.shape


def upsample2_bwd(cache, gy):
    h, w = cache[:2]
    return gy.reshape((h, 2, w, 2) + cache[2:]).sum(axis=(1, 3))


def concat_fwd(parts, axis=-1):
    ax = axis % parts[0].ndim
    shapes = [p.shape[:ax] + p.shape[ax + 1:] for p in parts]
    if any(s != shapes[0] for s in shapes):
        raise ShapeError(f"concat needs matching shapes off axis {axis}, got {shapes}")
    return np.concatenate(parts, axis=ax), ([p.shape[ax] for p in parts], ax)


def concat_bwd(cache, gy):
    sizes, ax = cache
    return np.split(gy, np.cumsum(sizes)[:-1], axis=ax)


def envelope_fwd(i, q, eps=1e-12):
    if i.shape != q.shape:
        raise ShapeError(f"I {i.shape} and Q {q.shape} differ")
    env = np.sqrt(i * i + q * q + np.asarray(eps * eps, i.dtype))
    return env, (i, q, env)


def envelope_bwd(cache, gy):
    i, q, env = cache
    return gy * i / env, gy * q / env


def l1_loss_fwd(pred, ref):
    """Mean absolute error; the subgradient at a tie is 0."""
    if pred.shape != ref.shape:
        raise ShapeError(f"pred {pred.shape} and ref {ref.shape} differ")
    d = pred - ref
    return float(np.mean(np.abs(d), dtype=np.float64)), (np.sign(d), d.size)


def l1_loss_bwd(cache, g=1.0):
    sign, n = cache
    return sign * np.asarray(g / n, dtype=sign.dtype)


def check_divisible(h, w, depth):
    m = 2 ** depth
    if h % m or w % m:
        ph, pw = (-h) % m, (-w) % m
        raise ConfigurationError(
            f"input {h}x{w} must be divisible by {m} for depth {depth}; "
            f"pad by ({ph}, {pw}) to {h + ph}x{w + pw}")
