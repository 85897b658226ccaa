"""Central finite-difference checks shared by the gradient tests."""
import numpy as np


def rel_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def numeric_grad(f, x, idx, eps):
    """Central difference of scalar ``f()`` with respect to ``x[idx]`` (perturbed in place)."""
    old = x[idx]
    x[idx] = old + eps
    up = f()
    x[idx] = old - eps
    down = f()
    x[idx] = old
    return (up - down) / (2 * eps)


def max_rel_error(f, x, analytic, indices, eps=1e-6, floor=1e-8):
    """Largest relative error of ``analytic`` against finite differences at ``indices``."""
    worst = 0.0
    for idx in indices:
        fd = numeric_grad(f, x, idx, eps)
        worst = max(worst, rel_error(fd, analytic[idx], floor))
    return worst


def sample_indices(shape, n, rng):
    flat = rng.choice(int(np.prod(shape)), size=min(n, int(np.prod(shape))), replace=False)
    return [np.unravel_index(int(k), shape) for k in flat]
