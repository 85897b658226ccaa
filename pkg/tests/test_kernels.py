import os
import subprocess
import sys

import numpy as np
import pytest

from echobeam import phantom
from echobeam.kernels import BACKEND, available_backends

BACKENDS = available_backends()
needs_both = pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")


@pytest.fixture(scope="module")
def case(small, hann):
    geom, grid, pulse, speckle = small
    rng = np.random.default_rng(7)
    shape = (grid.line_count, geom.element_count, geom.sample_count)
    fld = phantom.make_speckle_phantom(speckle.density * 0.2, speckle.depth_window,
                                       speckle.sector, 1)
    geo = (float(geom.speed_of_sound), float(geom.omega0), float(geom.sample_rate))
    return dict(geom=geom, grid=grid, pulse=pulse, fld=fld, shape=shape, geo=geo,
                apod=hann.weights, angles=np.ascontiguousarray(grid.line_angles),
                di=rng.standard_normal(shape), dq=rng.standard_normal(shape),
                gi=rng.standard_normal(shape[::2]), gq=rng.standard_normal(shape[::2]),
                assign=(np.arange(grid.line_count) // 7).astype(np.int64),
                act=rng.standard_normal((8, 12, 5)))


def _run(mod, c, which):
    g = c["geom"]
    if which == "simulate":
        oi, oq = np.zeros(c["shape"]), np.zeros(c["shape"])
        p = c["pulse"]
        mod.simulate_accumulate(oi, oq, c["angles"], c["fld"].r, c["fld"].theta,
                                c["fld"].amplitude, g.elements, *c["geo"], p.envelope_sigma,
                                p.tx_beam_sigma,
                                phantom.PULSE_HALF_WINDOW * p.envelope_sigma * g.sample_rate)
        return oi, oq
    if which == "focus":
        oi = np.zeros(c["shape"][::2])
        oq = np.zeros_like(oi)
        n_acq = int(c["assign"].max()) + 1
        mod.focus_forward(np.ascontiguousarray(c["di"][:n_acq]),
                          np.ascontiguousarray(c["dq"][:n_acq]), c["assign"], c["angles"],
                          g.elements, c["apod"], *c["geo"], oi, oq)
        return oi, oq
    if which == "adjoint":
        n_acq = int(c["assign"].max()) + 1
        shp = (n_acq,) + c["shape"][1:]
        oi, oq = np.zeros(shp), np.zeros(shp)
        mod.focus_adjoint(c["gi"], c["gq"], c["assign"], c["angles"], g.elements, c["apod"],
                          *c["geo"], oi, oq)
        return oi, oq
    cols = np.empty((8 * 12, 9 * 5))
    mod.im2col(c["act"], 3, cols)
    return (cols,)


@needs_both
@pytest.mark.parametrize("which", ["simulate", "focus", "adjoint", "im2col"])
def test_backends_agree(case, which):
    a = _run(BACKENDS["python"], case, which)
    b = _run(BACKENDS["cython"], case, which)
    for x, y in zip(a, b):
        assert np.any(x)
        assert np.max(np.abs(x - y)) <= 1e-10 * np.max(np.abs(x))


def test_im2col_layout(case):
    (cols,) = _run(BACKENDS["python"], case, "im2col")
    x = case["act"]
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    r, c = 4, 7
    assert np.array_equal(cols[r * 12 + c], padded[r:r + 3, c:c + 3, :].reshape(-1))


def test_environment_forces_fallback():
    env = dict(os.environ, ECHOBEAM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from echobeam import kernels; "
                          "print(kernels.BACKEND)"], capture_output=True, text=True, env=env)
    assert out.stdout.strip() == "python"
    assert BACKEND in BACKENDS
