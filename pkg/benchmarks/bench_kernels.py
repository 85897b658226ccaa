"""Compare the compiled and pure-numpy kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--default-geometry]

Prints the median wall time per call for each kernel and backend, the
speed-up, and the largest absolute difference between backend outputs.
"""
import argparse
import statistics
import time

import numpy as np
from threadpoolctl import threadpool_limits

from echobeam import phantom
from echobeam.kernels import available_backends
from echobeam.rxpipeline import ApodizationWindow


def _median_time(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def cases(geom, grid, pulse, speckle):
    fld = phantom.make_speckle_phantom(speckle.density, speckle.depth_window, speckle.sector, 1)
    shape = (grid.line_count, geom.element_count, geom.sample_count)
    rng = np.random.default_rng(0)
    data_i, data_q = rng.standard_normal(shape), rng.standard_normal(shape)
    grad_i = rng.standard_normal((grid.line_count, geom.sample_count))
    grad_q = rng.standard_normal((grid.line_count, geom.sample_count))
    assign = np.arange(grid.line_count, dtype=np.int64)
    angles = np.ascontiguousarray(grid.line_angles)
    apod = ApodizationWindow.make("HANN", geom.element_count).weights
    geo = (float(geom.speed_of_sound), float(geom.omega0), float(geom.sample_rate))
    act = rng.standard_normal((32, 256, 48)).astype(np.float32)

    def simulate(mod):
        oi, oq = np.zeros(shape), np.zeros(shape)
        mod.simulate_accumulate(oi, oq, angles, fld.r, fld.theta, fld.amplitude, geom.elements,
                                *geo, pulse.envelope_sigma, pulse.tx_beam_sigma,
                                phantom.PULSE_HALF_WINDOW * pulse.envelope_sigma
                                * geom.sample_rate)
        return oi, oq

    def focus(mod):
        oi = np.zeros((grid.line_count, geom.sample_count))
        oq = np.zeros_like(oi)
        mod.focus_forward(data_i, data_q, assign, angles, geom.elements, apod, *geo, oi, oq)
        return oi, oq

    def adjoint(mod):
        oi, oq = np.zeros(shape), np.zeros(shape)
        mod.focus_adjoint(grad_i, grad_q, assign, angles, geom.elements, apod, *geo, oi, oq)
        return oi, oq

    def im2col(mod):
        cols = np.empty((32 * 256, 9 * 48), np.float32)
        mod.im2col(act, 3, cols)
        return (cols,)

    return {f"simulate ({len(fld)} scatterers)": simulate, "focus_forward": focus,
            "focus_adjoint": adjoint, "im2col 32x256x48": im2col}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--default-geometry", action="store_true")
    args = p.parse_args()
    if args.default_geometry:
        geom, grid = phantom.default_geometry(), phantom.default_grid()
        speckle = phantom.default_speckle(grid)
    else:
        geom, grid = phantom.small_geometry(), phantom.small_grid()
        speckle = phantom.small_speckle(grid)
    pulse = phantom.PulseSpec.for_aperture(geom)
    backends = available_backends()
    if "cython" not in backends:
        print("compiled backend not built; only the numpy fallback is available")
    print(f"{'kernel':32s} " + " ".join(f"{b:>10s}" for b in backends)
          + f" {'speed-up':>9s} {'max |diff|':>11s}")
    with threadpool_limits(1):
        for name, fn in cases(geom, grid, pulse, speckle).items():
            times = {b: _median_time(lambda m=m: fn(m), args.repeat) for b, m in backends.items()}
            line = f"{name:32s} " + " ".join(f"{times[b] * 1e3:8.2f}ms" for b in backends)
            if "cython" in backends:
                outs = [fn(m) for m in backends.values()]
                diff = max(float(np.max(np.abs(a - b))) for a, b in zip(*outs))
                line += f" {times['python'] / times['cython']:8.1f}x {diff:11.2e}"
            print(line)


if __name__ == "__main__":
    main()
