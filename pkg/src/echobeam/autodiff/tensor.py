"""A small tape-free reverse-mode engine over numpy arrays.

Every differentiable function returns a :class:`Tensor` holding references
to its parents and a closure that pushes its gradient to them.
:meth:`Tensor.backward` orders the graph topologically and runs the closures
once each, in a fixed order.
"""
from __future__ import annotations

import numpy as np

from echobeam import rxpipeline, txmodel
from echobeam.autodiff import ops
from echobeam.errors import NumericalError, ShapeError

DEBUG = False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, parents=(), requires_grad=False, name=""):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = None
        self.name = name
        if DEBUG and not np.all(np.isfinite(self.data)):
            raise NumericalError(f"non-finite values produced by {name or 'op'}")

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor({self.name or 'anon'}, shape={self.data.shape}, dtype={self.data.dtype})"

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        order, seen = [], set()

        def visit(node):
            # iterative post-order keeps deep networks off the recursion limit
            stack = [(node, False)]
            while stack:
                n, done = stack.pop()
                if done:
                    order.append(n)
                    continue
                if id(n) in seen:
                    continue
                seen.add(id(n))
                stack.append((n, True))
                for p in reversed(n._parents):
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, self.data.dtype)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def param(data, name=""):
    return Tensor(data, requires_grad=True, name=name)


def const(data, name=""):
    return Tensor(data, name=name)


def _node(out, parents, backward, name):
    t = Tensor(out, tuple(parents), name=name)
    if t.requires_grad:
        t._backward = backward
    return t


# Network operations -------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor, gain: float = 1.0) -> Tensor:
    """Channels-last convolution: ``x [H, W, C]``, kernel ``gain * w`` with ``w [k, k, C, C']``."""
    kern = w.data if gain == 1.0 else w.data * np.asarray(gain, w.data.dtype)
    y, cache = ops.conv_hwc_fwd(x.data, kern, b.data)

    def backward(g):
        gx, gw, gb = ops.conv_hwc_bwd(cache, g)
        x._accumulate(gx)
        w._accumulate(gw if gain == 1.0 else gw * np.asarray(gain, gw.dtype))
        b._accumulate(gb)
    return _node(y, (x, w, b), backward, "conv2d")


def leaky_relu(x: Tensor, slope=0.1) -> Tensor:
    y, cache = ops.leaky_relu_fwd(x.data, slope)
    return _node(y, (x,), lambda g: x._accumulate(ops.leaky_relu_bwd(cache, g)), "leaky_relu")


def maxpool2(x: Tensor) -> Tensor:
    y, cache = ops.maxpool2_fwd(x.data)
    return _node(y, (x,), lambda g: x._accumulate(ops.maxpool2_bwd(cache, g)), "maxpool2")


def upsample2(x: Tensor) -> Tensor:
    y, cache = ops.upsample2_fwd(x.data)
    return _node(y, (x,), lambda g: x._accumulate(ops.upsample2_bwd(cache, g)), "upsample2")


def concat(parts) -> Tensor:
    y, cache = ops.concat_fwd([p.data for p in parts])

    def backward(g):
        for p, gp in zip(parts, ops.concat_bwd(cache, g)):
            p._accumulate(gp)
    return _node(y, tuple(parts), backward, "concat")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)
    return _node(a.data + b.data, (a, b), backward, "add")


def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,),
                 lambda g: x._accumulate(g.reshape(x.shape)), "reshape")


def select(x: Tensor, index: int) -> Tensor:
    """``x[index]`` along the leading axis."""
    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        x._accumulate(full)
    return _node(x.data[index], (x,), backward, "select")


def pad_axis(x: Tensor, axis: int, after: int) -> Tensor:
    """Zero-pad ``after`` entries at the end of ``axis``."""
    if after == 0:
        return x
    widths = [(0, 0)] * x.data.ndim
    widths[axis] = (0, after)
    n = x.shape[axis]
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(0, n)
    return _node(np.pad(x.data, widths), (x,), lambda g: x._accumulate(g[tuple(sl)]), "pad")


def crop_axis(x: Tensor, axis: int, size: int) -> Tensor:
    if size == x.shape[axis]:
        return x
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(0, size)
    sl = tuple(sl)

    def backward(g):
        full = np.zeros_like(x.data)
        full[sl] = g
        x._accumulate(full)
    return _node(x.data[sl], (x,), backward, "crop")


# Beamforming and loss -------------------------------------------------------

def emulate(psi: Tensor, sla_iq: Tensor) -> Tensor:
    """Transmit combination on stacked I/Q channel data ``[2, L, E, T]`` -> ``[2, M, E, T]``."""
    x = sla_iq.data
    p = psi.data.astype(x.dtype, copy=False)
    y = np.stack([txmodel.combine(p, x[0]), txmodel.combine(p, x[1])])
    n_acq, n_lines = p.shape

    def backward(g):
        if psi.requires_grad:
            gp = (g[0].reshape(n_acq, -1) @ x[0].reshape(n_lines, -1).T
                  + g[1].reshape(n_acq, -1) @ x[1].reshape(n_lines, -1).T)
            psi._accumulate(gp)
        if sla_iq.requires_grad:
            sla_iq._accumulate(np.stack([txmodel.combine_adjoint(p, g[0]),
                                         txmodel.combine_adjoint(p, g[1])]))
    return _node(y, (psi, sla_iq), backward, "emulate")


def focus(y: Tensor, assignment, geom, grid, apod, dtype=None) -> Tensor:
    """Dynamic focusing ``[2, M, E, T]`` -> ``[2, L, T]`` with the exact adjoint as backward.

    The output is cast to ``dtype`` (default: the input dtype).
    """
    n_acq = y.shape[1]
    fi, fq = rxpipeline.focus_arrays(y.data[0], y.data[1], assignment, geom, grid, apod)
    out = np.stack([fi, fq]).astype(dtype or y.data.dtype, copy=False)

    def backward(g):
        gi, gq = rxpipeline.focus_adjoint(g[0], g[1], assignment, n_acq, geom, grid, apod)
        y._accumulate(np.stack([gi, gq]).astype(y.data.dtype, copy=False))
    return _node(out, (y,), backward, "focus")


def gather_delayed(signal: Tensor, t_hat, fs) -> Tensor:
    """Linear-interpolation sampling of ``signal`` (last axis) at times ``t_hat``.

    ``t_hat`` has the trailing shape of the output; gradients flow to the two
    neighbouring samples with the interpolation weights, zero outside the record.
    """
    n_t = signal.shape[-1]
    pos = np.asarray(t_hat, dtype=np.float64) * fs
    i0 = np.floor(pos).astype(np.int64)
    f = pos - i0
    w0 = np.where((i0 >= 0) & (i0 < n_t), 1.0 - f, 0.0)
    w1 = np.where((i0 + 1 >= 0) & (i0 + 1 < n_t), f, 0.0)
    c0 = np.clip(i0, 0, n_t - 1)
    c1 = np.clip(i0 + 1, 0, n_t - 1)
    x = signal.data
    out = w0 * x[..., c0] + w1 * x[..., c1]

    def backward(g):
        lead = x.shape[:-1]
        flat = g.reshape(lead + (-1,))
        gx = np.zeros(lead + (n_t,), dtype=x.dtype)
        for c, w in ((c0, w0), (c1, w1)):
            np.add.at(gx, (..., c.ravel()), flat * w.ravel())
        signal._accumulate(gx)
    return _node(out.astype(x.dtype, copy=False), (signal,), backward, "gather_delayed")


def envelope(i: Tensor, q: Tensor) -> Tensor:
    env, cache = ops.envelope_fwd(i.data, q.data, rxpipeline.ENV_EPS)

    def backward(g):
        gi, gq = ops.envelope_bwd(cache, g)
        i._accumulate(gi)
        q._accumulate(gq)
    return _node(env, (i, q), backward, "envelope")


def l1_loss(pred: Tensor, ref) -> Tensor:
    ref = ref.data if isinstance(ref, Tensor) else np.asarray(ref)
    val, cache = ops.l1_loss_fwd(pred.data, ref)
    return _node(np.asarray(val, dtype=pred.data.dtype), (pred,),
                 lambda g: pred._accumulate(ops.l1_loss_bwd(cache, g)), "l1_loss")
