import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from echobeam import phantom, rxpipeline, txmodel
from echobeam.errors import ConfigurationError, NumericalError, ShapeError
from echobeam.phantom import ChannelData, ScanGrid, ScattererField
from echobeam.rxpipeline import ApodizationWindow


def path_length_delay(t, alpha, dm, c):
    """Two-way travel time: down to r = c*t/2 along alpha, back to the element at dm."""
    r = c * t / 2.0
    depth, lateral = r * math.cos(alpha), r * math.sin(alpha)
    return r / c + math.hypot(depth - 0.0, lateral - dm) / c


def test_delay_centre_element_identity():
    assert rxpipeline.compute_delay(20e-6, 0.3, 0.0, 1540.0) == 20e-6
    t = np.linspace(0, 1e-4, 101)
    assert np.array_equal(rxpipeline.compute_delay(t, -0.2, 0.0, 1540.0), t)


def test_delay_at_time_zero():
    assert rxpipeline.compute_delay(0.0, 0.4, 1.54e-3, 1540.0) == pytest.approx(1e-6, abs=1e-18)


def test_delay_geometric_example():
    t, a, dm, c = 40e-6, math.radians(10), 5e-3, 1540.0
    got = rxpipeline.compute_delay(t, a, dm, c)
    assert abs(got - path_length_delay(t, a, dm, c)) <= 1e-12


@given(st.floats(10e-6, 100e-6), st.floats(-math.radians(35), math.radians(35)),
       st.floats(-15e-3, 15e-3))
def test_delay_matches_path_length(t, a, dm):
    assert abs(rxpipeline.compute_delay(t, a, dm, 1540.0) - path_length_delay(t, a, dm, 1540.0)) \
        <= 1e-12


def test_delay_negative_discriminant_guard():
    # alpha = 90 deg, t/2 = dm/c: the discriminant is exactly zero and rounds below it
    u = 53e-7
    with pytest.raises(NumericalError):
        rxpipeline.compute_delay(2 * u, math.pi / 2, u * 1540.0, 1540.0)


def test_phase_rotate_examples():
    i, q = rxpipeline.phase_rotate(0.3, -0.7, 0.0, 1e7)
    assert (i, q) == (0.3, -0.7)
    w0 = 2 * math.pi * 2.5e6
    i, q = rxpipeline.phase_rotate(1.0, 0.0, (math.pi / 2) / w0, w0)
    assert i == pytest.approx(0.0, abs=1e-15) and q == pytest.approx(1.0, abs=1e-15)


@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e-5, 1e-5))
def test_phase_rotate_isometry(i, q, dt):
    i2, q2 = rxpipeline.phase_rotate(i, q, dt, 2 * math.pi * 2.5e6)
    m0, m1 = i * i + q * q, i2 * i2 + q2 * q2
    assert abs(m1 - m0) <= 1e-12 * max(m0, 1e-300)


def test_sample_delayed_examples():
    sig = np.array([1.0, 4.0, -2.0, 8.0])
    fs = 5e6
    assert rxpipeline.sample_delayed(sig, 2 / fs, fs) == -2.0
    assert rxpipeline.sample_delayed(sig, 1.5 / fs, fs) == pytest.approx(1.0)
    assert rxpipeline.sample_delayed(sig, -1 / fs, fs) == 0.0
    assert rxpipeline.sample_delayed(sig, 5 / fs, fs) == 0.0


def _oracle_focus(data_i, data_q, assignment, geom, grid, apod):
    """Per-line loop built from the scalar operations; independent of the kernels."""
    t = geom.times
    out = np.zeros((grid.line_count, geom.sample_count), dtype=complex)
    for k, alpha in enumerate(grid.line_angles):
        j = assignment[k]
        for m, dm in enumerate(geom.elements):
            th = rxpipeline.compute_delay(t, alpha, dm, geom.speed_of_sound)
            si = rxpipeline.sample_delayed(data_i[j, m], th, geom.sample_rate)
            sq = rxpipeline.sample_delayed(data_q[j, m], th, geom.sample_rate)
            ri, rq = rxpipeline.phase_rotate(si, sq, th - t, geom.omega0)
            out[k] += apod[m] * (ri + 1j * rq)
    return out


def test_focus_matches_scalar_oracle(rng):
    geom = phantom.ArrayGeometry.uniform(6, sample_count=96)
    grid = ScanGrid(7, math.radians(2.0))
    scheme = txmodel.init_mla(7, 3)
    di, dq = rng.standard_normal((2, 3, 6, 96))
    apod = ApodizationWindow.make("HANN", 6).weights
    fi, fq = rxpipeline.focus_arrays(di, dq, scheme.assignment, geom, grid, apod)
    ref = _oracle_focus(di, dq, scheme.assignment, geom, grid, apod)
    assert np.max(np.abs(fi + 1j * fq - ref)) < 1e-12 * np.max(np.abs(ref))


def test_focus_single_element_rect():
    geom = phantom.ArrayGeometry.uniform(1, sample_count=50)
    grid = ScanGrid(3, 0.01)
    rng = np.random.default_rng(3)
    data = ChannelData(rng.standard_normal((3, 1, 50)), rng.standard_normal((3, 1, 50)),
                       geom, grid)
    f = rxpipeline.dynamic_focus(data, None, geom, grid, ApodizationWindow.make("RECT", 1))
    # element at the origin: t_hat = t and no rotation
    assert np.allclose(f.i, data.i[:, 0], rtol=0, atol=1e-12)
    assert np.allclose(f.q, data.q[:, 0], rtol=0, atol=1e-12)


def test_focus_zero_in_zero_out(small, hann):
    geom, grid = small[:2]
    z = np.zeros((grid.line_count, geom.element_count, geom.sample_count))
    f = rxpipeline.dynamic_focus(ChannelData(z, z, geom, grid), None, geom, grid, hann)
    assert not f.i.any() and not f.q.any()
    env = rxpipeline.das_reconstruct(ChannelData(z, z, geom, grid), None, geom, grid, hann)
    assert np.all(env.values == rxpipeline.ENV_EPS)


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_focus_linear(seed, a, b):
    geom = phantom.ArrayGeometry.uniform(4, sample_count=40)
    grid = ScanGrid(6, 0.02)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, 4, 40))
    y = rng.standard_normal((2, 3, 4, 40))
    asg = np.array([0, 0, 1, 1, 2, 2])
    apod = np.ones(4)
    fx = np.array(rxpipeline.focus_arrays(x[0], x[1], asg, geom, grid, apod))
    fy = np.array(rxpipeline.focus_arrays(y[0], y[1], asg, geom, grid, apod))
    z = a * x + b * y
    fz = np.array(rxpipeline.focus_arrays(z[0], z[1], asg, geom, grid, apod))
    assert np.allclose(fz, a * fx + b * fy, rtol=1e-6, atol=1e-9)


def test_focus_adjoint_identity(small, hann, rng):
    geom, grid = small[:2]
    s = txmodel.init_mla(grid.line_count, 10)
    x = rng.standard_normal((2, s.acquisitions, geom.element_count, geom.sample_count))
    u = rng.standard_normal((2, grid.line_count, geom.sample_count))
    fi, fq = rxpipeline.focus_arrays(x[0], x[1], s.assignment, geom, grid, hann.weights)
    ai, aq = rxpipeline.focus_adjoint(u[0], u[1], s.assignment, s.acquisitions, geom, grid,
                                      hann.weights)
    lhs = np.vdot(u[0], fi) + np.vdot(u[1], fq)
    rhs = np.vdot(ai, x[0]) + np.vdot(aq, x[1])
    assert lhs == pytest.approx(rhs, rel=1e-6)


@pytest.mark.parametrize("line", [13, 20])
def test_point_target_localised(line):
    geom = phantom.small_geometry()
    grid = ScanGrid(27, phantom.LINE_STEP * 4)
    r = 0.02
    fld = ScattererField([r], [grid.line_angles[line]], [1.0])
    data = phantom.simulate_channel_data(fld, geom, grid, phantom.PulseSpec.for_aperture(geom))
    env = rxpipeline.das_reconstruct(data, None, geom, grid,
                                     ApodizationWindow.make("HANN", geom.element_count)).values
    k, n = np.unravel_index(np.argmax(env), env.shape)
    assert abs(k - line) <= 1
    assert abs(n - 2 * r / geom.speed_of_sound * geom.sample_rate) <= 1
    assert env.max() > np.hypot(data.i, data.q).max()


def test_envelope_examples():
    assert rxpipeline.envelope(np.array([3.0]), np.array([4.0])).values[0] == pytest.approx(5.0)
    z = np.zeros(1)
    assert rxpipeline.envelope(z, z).values[0] == rxpipeline.ENV_EPS
    gi, gq = rxpipeline.envelope_grad(z, z, np.ones(1))
    assert gi[0] == 0 and gq[0] == 0


def test_envelope_grad_finite_differences(rng):
    i, q = rng.standard_normal((2, 4, 5))
    up = rng.standard_normal((4, 5))
    gi, gq = rxpipeline.envelope_grad(i, q, up)
    h = 1e-6
    for idx in np.ndindex(i.shape):
        e = np.zeros_like(i)
        e[idx] = h
        fi = (np.sum(up * rxpipeline.envelope(i + e, q).values)
              - np.sum(up * rxpipeline.envelope(i - e, q).values)) / (2 * h)
        fq = (np.sum(up * rxpipeline.envelope(i, q + e).values)
              - np.sum(up * rxpipeline.envelope(i, q - e).values)) / (2 * h)
        assert abs(fi - gi[idx]) <= 1e-4 * max(abs(gi[idx]), 1e-6)
        assert abs(fq - gq[idx]) <= 1e-4 * max(abs(gq[idx]), 1e-6)


def test_log_compress_examples():
    assert np.all(rxpipeline.log_compress(np.full((3, 3), 7.0)) == 255.0)
    env = np.array([[1.0, 1e-3, 0.1, 0.0]])
    out = rxpipeline.log_compress(env)
    assert out[0, 1] == 0.0
    assert out[0, 2] == pytest.approx(255 * (1 - 20 / 60))
    assert out[0, 2] == pytest.approx(170.0)
    assert out[0, 3] == 0.0
    assert not rxpipeline.log_compress(np.zeros((2, 2))).any()


def test_apodization_windows():
    w = ApodizationWindow.make("HANN", 16).weights
    assert np.all(w > 0) and np.all(w <= 1) and np.allclose(w, w[::-1])
    assert np.array_equal(ApodizationWindow.make("RECT", 5).weights, np.ones(5))
    with pytest.raises(ConfigurationError):
        ApodizationWindow(np.array([0.2, 0.5]))
    with pytest.raises(ConfigurationError):
        ApodizationWindow.make("KAISER", 4)


def test_scan_convert_constant():
    geom, grid = phantom.small_geometry(), phantom.small_grid()
    img = np.full((grid.line_count, geom.sample_count), 3.0)
    ras = rxpipeline.scan_convert(img, grid, geom, (64, 80))
    inside = ras != 0.0
    assert np.allclose(ras[inside], 3.0, rtol=1e-14)
    assert inside.sum() > 100 and (~inside).sum() > 100


def test_scan_convert_ridge():
    geom = phantom.default_geometry()
    grid = ScanGrid(41, math.radians(1.0))
    k = 30
    img = np.zeros((grid.line_count, geom.sample_count))
    img[k] = 1.0
    width, height = 301, 301
    ras = rxpipeline.scan_convert(img, grid, geom, (width, height))
    r_max = geom.speed_of_sound * (geom.sample_count - 1) / (2 * geom.sample_rate)
    half = abs(grid.line_angles[0])
    x = np.linspace(-r_max * math.sin(half), r_max * math.sin(half), width)
    z = np.linspace(0, r_max, height)
    zz, xx = np.meshgrid(z, x, indexing="ij")
    ang = np.arctan2(xx, zz)[ras > 0.5]
    assert ang.size > 50
    assert np.all(np.abs(ang - grid.line_angles[k]) < grid.sector_step)


def test_scan_convert_smooth_round_trip():
    geom = phantom.default_geometry()
    grid = phantom.default_grid()
    c, fs = geom.speed_of_sound, geom.sample_rate

    def field(x, z):
        return 1.0 + 0.5 * np.sin(x / 0.004) * np.cos(z / 0.01)

    r = c * np.arange(geom.sample_count) / (2 * fs)
    a = grid.line_angles[:, None]
    polar = field(r[None, :] * np.sin(a), r[None, :] * np.cos(a))
    width, height = 200, 200
    ras = rxpipeline.scan_convert(polar, grid, geom, (width, height))
    half = abs(grid.line_angles[0])
    x = np.linspace(-r[-1] * math.sin(half), r[-1] * math.sin(half), width)
    z = np.linspace(0, r[-1], height)
    xx, zz = np.meshgrid(x, z)
    inside = ras > 0
    truth = field(xx, zz)[inside]
    rms = np.sqrt(np.mean((ras[inside] - truth) ** 2)) / np.sqrt(np.mean(truth ** 2))
    assert inside.sum() > 1000
    assert rms < 0.01


def test_scan_convert_degenerate_raster(small):
    geom, grid = small[:2]
    with pytest.raises(ConfigurationError):
        rxpipeline.scan_convert(np.zeros((grid.line_count, 4)), grid, geom, (1, 10))


def test_das_sla_equals_reference_and_mla_is_worse(small, hann, sla_frame):
    geom, grid = small[:2]
    ref = rxpipeline.das_reconstruct(sla_frame, None, geom, grid, hann).values
    ident = rxpipeline.das_reconstruct(sla_frame, txmodel.init_sla(grid.line_count), geom, grid,
                                       hann).values
    assert np.array_equal(ref, ident)
    s = txmodel.init_mla(grid.line_count, 10)
    mla = rxpipeline.das_reconstruct(txmodel.emulate_acquisitions(s, sla_frame), s, geom, grid,
                                     hann).values
    from echobeam import metrics
    p = metrics.psnr(metrics.display_image(mla), metrics.display_image(ref))
    assert math.isfinite(p) and p < metrics.PSNR_CAP


def test_focus_shape_errors(small, hann):
    geom, grid = small[:2]
    bad = ChannelData(np.zeros((2, 3, 4)), np.zeros((2, 3, 4)), geom, grid)
    with pytest.raises(ShapeError):
        rxpipeline.dynamic_focus(bad, None, geom, grid, hann)
