import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from echobeam import phantom
from echobeam.errors import ConfigurationError
from echobeam.phantom import ScattererField, ScanGrid


def test_zero_density_gives_empty_field():
    fld = phantom.make_speckle_phantom(0.0, (0.01, 0.02), 0.2, 7)
    assert len(fld) == 0


def test_speckle_is_deterministic():
    a = phantom.make_speckle_phantom(2e7, (0.005, 0.03), 0.25, 42)
    b = phantom.make_speckle_phantom(2e7, (0.005, 0.03), 0.25, 42)
    assert np.array_equal(a.r, b.r) and np.array_equal(a.theta, b.theta)
    assert np.array_equal(a.amplitude, b.amplitude)


def test_speckle_count_statistics():
    d, window, sector = 5e6, (0.01, 0.03), 0.3
    area = phantom.wedge_area(window, sector)
    # independent oracle: wedge area by numerical integration of r dr dtheta
    r = np.linspace(*window, 20001)
    area_oracle = sector * np.trapezoid(r, r)
    assert area == pytest.approx(area_oracle, rel=1e-9)
    mean = d * area
    counts = [len(phantom.make_speckle_phantom(d, window, sector, s)) for s in range(1, 101)]
    assert abs(counts[0] - mean) <= 4 * math.sqrt(mean)
    assert all(abs(c - mean) <= 4 * math.sqrt(mean) for c in counts)
    # Poisson: sample mean within 4 standard errors, variance close to the mean
    assert abs(np.mean(counts) - mean) < 4 * math.sqrt(mean / 100)
    assert 0.6 < np.var(counts, ddof=1) / mean < 1.5


@given(st.integers(0, 2**31), st.floats(0.001, 0.02), st.floats(0.05, 0.6))
def test_speckle_stays_inside_wedge(seed, lo, sector):
    window = (lo, lo + 0.01)
    fld = phantom.make_speckle_phantom(1e7, window, sector, seed)
    assert np.all((fld.r > window[0]) & (fld.r < window[1]))
    assert np.all(np.abs(fld.theta) <= sector / 2)


@pytest.mark.parametrize("window", [(0.02, 0.01), (0.01, 0.01), (-0.01, 0.02)])
def test_bad_window_rejected(window):
    with pytest.raises(ConfigurationError):
        phantom.make_speckle_phantom(1e6, window, 0.2, 0)


def test_negative_density_rejected():
    with pytest.raises(ConfigurationError):
        phantom.make_speckle_phantom(-1.0, (0.01, 0.02), 0.2, 0)


def test_cyst_radius_zero_matches_speckle_plus_points(small):
    speckle = small[3]
    pts = [(0.02, 0.0)]
    base = phantom.make_speckle_phantom(speckle.density, speckle.depth_window, speckle.sector, 4)
    cyst = phantom.make_cyst_phantom(speckle, (0.02, 0.0), 0.0, pts, seed=4)
    assert len(cyst) == len(base) + 1
    assert np.array_equal(cyst.r[:-1], base.r)
    assert np.array_equal(cyst.amplitude[:-1], base.amplitude)
    assert cyst.amplitude[-1] == phantom.POINT_TARGET_GAIN


def test_cyst_covering_sector_is_empty(small):
    speckle = small[3]
    fld = phantom.make_cyst_phantom(speckle, (0.02, 0.0), 1.0, seed=1)
    assert len(fld) == 0


def test_cyst_is_anechoic(small):
    speckle = small[3]
    centre, radius = (0.02, 0.05), 3e-3
    fld = phantom.make_cyst_phantom(speckle, centre, radius, seed=3)
    cx, cz = centre[0] * math.sin(centre[1]), centre[0] * math.cos(centre[1])
    d = [math.hypot(x - cx, z - cz) for x, z in zip(fld.x, fld.z)]
    assert len(fld) > 0
    assert min(d) >= radius


def test_cyst_outside_sector_rejected(small):
    with pytest.raises(ConfigurationError):
        phantom.make_cyst_phantom(small[3], (0.02, 1.0), 1e-3)
    with pytest.raises(ConfigurationError):
        phantom.make_cyst_phantom(small[3], (0.5, 0.0), 1e-3)


def test_cardiac_like_is_deterministic(small):
    a = phantom.make_cardiac_like_phantom(small[3], 9)
    b = phantom.make_cardiac_like_phantom(small[3], 9)
    assert np.array_equal(a.r, b.r) and np.array_equal(a.amplitude, b.amplitude)
    assert a.label == "cardiac"


def test_empty_field_simulates_to_zero(small):
    geom, grid, pulse, speckle = small
    fld = ScattererField([], [], [], depth_window=speckle.depth_window)
    data = phantom.simulate_channel_data(fld, geom, grid, pulse)
    assert data.shape == (grid.line_count, geom.element_count, geom.sample_count)
    assert not data.i.any() and not data.q.any()


def test_simulation_is_linear_in_reflectivity(small):
    geom, grid, pulse, _ = small
    one = ScattererField([0.02], [0.01], [0.7])
    two = ScattererField([0.02], [0.01], [1.4])
    a = phantom.simulate_channel_data(one, geom, grid, pulse)
    b = phantom.simulate_channel_data(two, geom, grid, pulse)
    assert np.array_equal(b.i, 2 * a.i) and np.array_equal(b.q, 2 * a.q)


def test_point_target_peak_at_two_way_time():
    geom = phantom.ArrayGeometry.uniform(1, sample_count=1024)
    grid = ScanGrid(1, phantom.LINE_STEP, 0.0)
    fld = ScattererField([0.040], [0.0], [1.0])
    data = phantom.simulate_channel_data(fld, geom, grid, phantom.PulseSpec())
    tau = 2 * 0.040 / 1540.0
    assert tau == pytest.approx(51.95e-6, abs=5e-9)
    mag = np.hypot(data.i[0, 0], data.q[0, 0])
    assert int(np.argmax(mag)) == round(tau * geom.sample_rate)


def test_simulator_matches_direct_sum(small):
    geom, grid, pulse, _ = small
    fld = ScattererField([0.012, 0.025], [-0.03, 0.02], [1.0, -0.5])
    data = phantom.simulate_channel_data(fld, geom, grid, pulse)
    t = geom.times
    c = geom.speed_of_sound
    ref = np.zeros(data.shape, dtype=complex)
    for k, alpha in enumerate(grid.line_angles):
        for m, xm in enumerate(geom.elements):
            for r, th, a in zip(fld.r, fld.theta, fld.amplitude):
                tau = r / c + math.hypot(r * math.sin(th) - xm, r * math.cos(th)) / c
                w = math.exp(-(alpha - th) ** 2 / (2 * pulse.tx_beam_sigma ** 2))
                g = np.exp(-(t - tau) ** 2 / (2 * pulse.envelope_sigma ** 2))
                g[np.abs(t - tau) > phantom.PULSE_HALF_WINDOW * pulse.envelope_sigma] = 0
                ref[k, m] += a * w * g * np.exp(-1j * geom.omega0 * tau)
    assert np.max(np.abs(data.complex() - ref)) < 1e-9 * np.max(np.abs(ref))


def test_short_time_axis_rejected():
    geom = phantom.ArrayGeometry.uniform(4, sample_count=16)
    fld = ScattererField([0.03], [0.0], [1.0])
    with pytest.raises(ConfigurationError):
        phantom.simulate_channel_data(fld, geom, ScanGrid(2), phantom.PulseSpec())


def test_simulation_deterministic(small, sla_frame):
    geom, grid, pulse, speckle = small
    fld = phantom.make_speckle_phantom(speckle.density, speckle.depth_window, speckle.sector, 5)
    again = phantom.simulate_channel_data(fld, geom, grid, pulse)
    assert np.array_equal(again.i, sla_frame.i) and np.array_equal(again.q, sla_frame.q)


def test_geometry_validation():
    with pytest.raises(ConfigurationError):
        phantom.ArrayGeometry((0.0, -1.0))
    with pytest.raises(ConfigurationError):
        phantom.ArrayGeometry((-1.0, 2.0))
    with pytest.raises(ConfigurationError):
        ScanGrid(0)


def test_geometry_dict_round_trip():
    g = phantom.default_geometry()
    assert phantom.ArrayGeometry.from_dict(g.to_dict()) == g
    grid = phantom.default_grid()
    assert ScanGrid.from_dict(grid.to_dict()) == grid


def test_default_grid_shape():
    grid = phantom.default_grid()
    assert grid.line_count == 140
    assert math.degrees(grid.sector_step) == pytest.approx(0.54)
    assert np.mean(grid.line_angles) == pytest.approx(0.0, abs=1e-15)


def test_aperture_matched_beam():
    geom = phantom.small_geometry()
    p = phantom.PulseSpec.for_aperture(geom)
    lam = geom.speed_of_sound / geom.carrier_frequency
    assert p.tx_beam_sigma == pytest.approx(0.376 * lam / (geom.pitch * 16))


def test_simulation_setup_presets():
    geom, grid, pulse, speckle = phantom.simulation_setup({"preset": "small"})
    assert geom.element_count == 16 and grid.line_count == 28
    geom, grid, pulse, speckle = phantom.simulation_setup(
        {"preset": "small", "pulse": {"envelope_sigma": 1e-6, "tx_beam_sigma": 0.02}})
    assert pulse.tx_beam_sigma == 0.02
