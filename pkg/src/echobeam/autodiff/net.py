"""Dual-path I/Q encoder-decoder reconstruction network."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from echobeam.autodiff import ops
from echobeam.autodiff import tensor as T
from echobeam.errors import ConfigurationError


@dataclass(frozen=True)
class Architecture:
    depth: int = 3
    base_channels: int = 16
    kernel_size: int = 3
    slope: float = 0.1

    def __post_init__(self):
        if self.depth < 0 or self.base_channels < 1:
            raise ConfigurationError("depth must be >= 0 and base_channels >= 1")
        if self.kernel_size % 2 == 0:
            raise ConfigurationError("kernel_size must be odd")

    def layer_shapes(self) -> list:
        """Ordered ``(name, kernel shape)`` for one path; biases follow each kernel.

        Kernels are ``[k, k, c_in, c_out]``.
        """
        k, b = self.kernel_size, self.base_channels
        shapes, c_in = [], 1
        for lvl in range(self.depth):
            c = b * 2 ** lvl
            shapes += [(f"enc{lvl}a", (k, k, c_in, c)), (f"enc{lvl}b", (k, k, c, c))]
            c_in = c
        c = b * 2 ** self.depth
        shapes += [("mid_a", (k, k, c_in, c)), ("mid_b", (k, k, c, c))]
        c_in = c
        for lvl in reversed(range(self.depth)):
            c = b * 2 ** lvl
            shapes += [(f"dec{lvl}a", (k, k, c_in + c, c)), (f"dec{lvl}b", (k, k, c, c))]
            c_in = c
        shapes.append(("out", (1, 1, c_in, 1)))
        return shapes


def he_gain(shape) -> float:
    """He-uniform bound ``sqrt(6 / fan_in)`` for a ``[k, k, c_in, c_out]`` kernel."""
    return float(np.sqrt(6.0 / int(np.prod(shape[:3]))))


@dataclass
class ReconNetwork:
    """Two structurally identical encoder-decoder paths, one for I and one for Q.

    Parameters are stored per path as an ordered ``{name: Tensor}`` dict with
    ``name`` and ``name + "_b"`` entries for kernel and bias.

    Kernels are stored at unit scale (initialised U(-1, 1)) and multiplied by
    their He gain when applied, so a fixed Adam step is the same relative
    change in every layer regardless of its fan-in.
    """

    arch: Architecture
    theta_i: dict = field(default_factory=dict)
    theta_q: dict = field(default_factory=dict)

    @classmethod
    def create(cls, arch: Architecture | None = None, seed: int = 0,
               dtype=np.float32) -> "ReconNetwork":
        arch = arch or Architecture()
        rng = np.random.default_rng(seed)
        paths = []
        for _ in range(2):
            params = {}
            for name, shape in arch.layer_shapes():
                if name == "out":
                    w = np.zeros(shape, dtype=dtype)   # start from the identity map
                else:
                    w = rng.uniform(-1.0, 1.0, shape).astype(dtype)
                params[name] = T.param(w, name)
                params[name + "_b"] = T.param(np.zeros(shape[3], dtype=dtype), name + "_b")
            paths.append(params)
        return cls(arch, paths[0], paths[1])

    @classmethod
    def zeros(cls, arch: Architecture | None = None, dtype=np.float64) -> "ReconNetwork":
        net = cls.create(arch, 0, dtype)
        for p in net.parameters():
            p.data[...] = 0
        return net

    def parameters(self) -> list:
        return list(self.theta_i.values()) + list(self.theta_q.values())

    def named_parameters(self) -> list:
        return ([("I." + k, v) for k, v in self.theta_i.items()]
                + [("Q." + k, v) for k, v in self.theta_q.items()])

    @property
    def dtype(self):
        return next(iter(self.theta_i.values())).data.dtype

    def _gains(self) -> dict:
        return {name: he_gain(shape) for name, shape in self.arch.layer_shapes()}

    def path(self, params: dict, x: T.Tensor) -> T.Tensor:
        """One encoder-decoder path on a ``[H, W]`` tensor, residual output."""
        a = self.arch
        h, w = x.shape
        ops.check_divisible(h, w, a.depth)
        act = lambda t: T.leaky_relu(t, a.slope)
        gains = self._gains()
        conv = lambda t, n: T.conv2d(t, params[n], params[n + "_b"], gains[n])
        y = T.reshape(x, (h, w, 1))
        skips = []
        for lvl in range(a.depth):
            y = act(conv(act(conv(y, f"enc{lvl}a")), f"enc{lvl}b"))
            skips.append(y)
            y = T.maxpool2(y)
        y = act(conv(act(conv(y, "mid_a")), "mid_b"))
        for lvl in reversed(range(a.depth)):
            y = T.concat([T.upsample2(y), skips[lvl]])
            y = act(conv(act(conv(y, f"dec{lvl}a")), f"dec{lvl}b"))
        y = conv(y, "out")
        return T.add(x, T.reshape(y, (h, w)))

    def __call__(self, i: T.Tensor, q: T.Tensor):
        return self.path(self.theta_i, i), self.path(self.theta_q, q)


def forward(net: ReconNetwork, focused):
    """Run both paths on a :class:`~echobeam.rxpipeline.FocusedIQ`; returns numpy ``(I', Q')``."""
    dt = net.dtype
    i_out, q_out = net(T.const(np.asarray(focused.i, dtype=dt)),
                       T.const(np.asarray(focused.q, dtype=dt)))
    return i_out.data, q_out.data
