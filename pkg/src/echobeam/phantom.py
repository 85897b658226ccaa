"""Synthetic phantoms and pulse-echo channel-data simulation.

The simulator is a narrowband point-scatterer model: every scatterer returns
a Gaussian-enveloped, phase-shifted copy of the demodulated pulse to every
element, weighted by a Gaussian two-way transmit beam around the focused
line direction. The map from reflectivities to samples is linear, which is
what makes transmit emulation by linear combination valid.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from echobeam import kernels
from echobeam.errors import ConfigurationError, NumericalError, ShapeError

SPEED_OF_SOUND = 1540.0
LINE_STEP = math.radians(0.54)
PULSE_HALF_WINDOW = 8.0    # in envelope sigmas; exp(-32) ~ 1e-14
POINT_TARGET_GAIN = 20.0   # times the unit speckle RMS


@dataclass(frozen=True)
class ArrayGeometry:
    """Linear phased array and demodulated sampling parameters."""

    element_positions: tuple
    speed_of_sound: float = SPEED_OF_SOUND
    carrier_frequency: float = 2.5e6
    sample_rate: float = 5e6
    sample_count: int = 1024

    def __post_init__(self):
        x = np.asarray(self.element_positions, dtype=np.float64)
        object.__setattr__(self, "element_positions", tuple(float(v) for v in x))
        if x.size == 0:
            raise ConfigurationError("element_positions: need at least one element")
        if x.size > 1 and not np.all(np.diff(x) > 0):
            raise ConfigurationError("element_positions: must be strictly increasing")
        if np.max(np.abs(x + x[::-1])) > 1e-12:
            raise ConfigurationError("element_positions: must be symmetric about 0")
        if not self.speed_of_sound > 0:
            raise ConfigurationError("speed_of_sound: must be positive")
        if not self.carrier_frequency > 0:
            raise ConfigurationError("carrier_frequency: must be positive")
        if not self.sample_rate > 0:
            raise ConfigurationError("sample_rate: must be positive")
        if int(self.sample_count) <= 0:
            raise ConfigurationError("sample_count: must be positive")

    @classmethod
    def uniform(cls, element_count: int, pitch: float | None = None, *,
                speed_of_sound: float = SPEED_OF_SOUND, carrier_frequency: float = 2.5e6,
                sample_rate: float = 5e6, sample_count: int = 1024) -> "ArrayGeometry":
        """Uniform array centred on the origin; default pitch is half a wavelength."""
        if element_count <= 0:
            raise ConfigurationError("element_count: must be positive")
        if pitch is None:
            pitch = speed_of_sound / carrier_frequency / 2.0
        x = (np.arange(element_count) - (element_count - 1) / 2.0) * pitch
        return cls(tuple(x), speed_of_sound, carrier_frequency, sample_rate, int(sample_count))

    @property
    def element_count(self) -> int:
        return len(self.element_positions)

    @property
    def elements(self) -> np.ndarray:
        return np.asarray(self.element_positions, dtype=np.float64)

    @property
    def pitch(self) -> float:
        # end-to-end span; adjacent differences lose digits for large arrays
        x = self.element_positions
        return (x[-1] - x[0]) / (len(x) - 1) if len(x) > 1 else 0.0

    @property
    def omega0(self) -> float:
        return 2.0 * math.pi * self.carrier_frequency

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.sample_count) / self.sample_rate

    @property
    def max_range(self) -> float:
        """Largest range whose two-way echo centre lands on the time axis."""
        return self.speed_of_sound * (self.sample_count - 1) / self.sample_rate / 2.0

    def to_dict(self) -> dict:
        return {
            "element_count": self.element_count,
            "pitch": self.pitch,
            "speed_of_sound": self.speed_of_sound,
            "carrier_frequency": self.carrier_frequency,
            "sample_rate": self.sample_rate,
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArrayGeometry":
        if "element_positions" in d:
            return cls(tuple(d["element_positions"]), d.get("speed_of_sound", SPEED_OF_SOUND),
                       d.get("carrier_frequency", 2.5e6), d.get("sample_rate", 5e6),
                       int(d.get("sample_count", 1024)))
        return cls.uniform(int(d["element_count"]), d.get("pitch"),
                           speed_of_sound=d.get("speed_of_sound", SPEED_OF_SOUND),
                           carrier_frequency=d.get("carrier_frequency", 2.5e6),
                           sample_rate=d.get("sample_rate", 5e6),
                           sample_count=int(d.get("sample_count", 1024)))


@dataclass(frozen=True)
class ScanGrid:
    """Uniformly spaced sector lines centred on broadside."""

    line_count: int = 140
    sector_step: float = LINE_STEP
    first_angle: float | None = None

    def __post_init__(self):
        if int(self.line_count) <= 0:
            raise ConfigurationError("line_count: must be positive")
        if not self.sector_step > 0:
            raise ConfigurationError("sector_step: must be positive")
        if self.first_angle is None:
            object.__setattr__(self, "first_angle", -(self.line_count - 1) / 2.0 * self.sector_step)

    @property
    def line_angles(self) -> np.ndarray:
        return self.first_angle + np.arange(self.line_count) * self.sector_step

    @property
    def sector_width(self) -> float:
        return self.line_count * self.sector_step

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScanGrid":
        return cls(int(d.get("line_count", 140)), d.get("sector_step", LINE_STEP),
                   d.get("first_angle"))


@dataclass(frozen=True)
class PulseSpec:
    envelope_sigma: float = 0.4e-6
    tx_beam_sigma: float = LINE_STEP

    def __post_init__(self):
        if not self.envelope_sigma > 0:
            raise ConfigurationError("envelope_sigma: must be positive")
        if not self.tx_beam_sigma > 0:
            raise ConfigurationError("tx_beam_sigma: must be positive")

    def tx_weight(self, alpha, theta):
        """Two-way transmit weighting of direction ``theta`` for a beam at ``alpha``."""
        d = np.subtract(alpha, theta)
        return np.exp(-d * d / (2.0 * self.tx_beam_sigma ** 2))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PulseSpec":
        return cls(**d)

    @classmethod
    def for_aperture(cls, geom: "ArrayGeometry", envelope_sigma: float = 0.4e-6) -> "PulseSpec":
        """Beam width matched to the aperture: Gaussian fit to the main lobe, 0.376 lambda/D."""
        wavelength = geom.speed_of_sound / geom.carrier_frequency
        aperture = geom.pitch * geom.element_count
        return cls(envelope_sigma, 0.376 * wavelength / aperture)


@dataclass
class ScattererField:
    r: np.ndarray
    theta: np.ndarray
    amplitude: np.ndarray
    label: str = "speckle"
    seed: int = 0
    depth_window: tuple | None = None

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64).ravel()
        self.theta = np.asarray(self.theta, dtype=np.float64).ravel()
        self.amplitude = np.asarray(self.amplitude, dtype=np.float64).ravel()
        if not (self.r.size == self.theta.size == self.amplitude.size):
            raise ShapeError("scatterer arrays must have equal length")
        if not np.all(np.isfinite(self.amplitude)):
            raise NumericalError("non-finite reflectivity")
        if self.depth_window is not None and self.r.size:
            lo, hi = self.depth_window
            if self.r.min() <= lo or self.r.max() >= hi:
                raise ConfigurationError("scatterer ranges must lie inside the depth window")

    def __len__(self):
        return self.r.size

    @property
    def x(self) -> np.ndarray:
        return self.r * np.sin(self.theta)

    @property
    def z(self) -> np.ndarray:
        return self.r * np.cos(self.theta)

    def subset(self, mask) -> "ScattererField":
        return ScattererField(self.r[mask], self.theta[mask], self.amplitude[mask],
                              self.label, self.seed, self.depth_window)

    def merged(self, other: "ScattererField") -> "ScattererField":
        return ScattererField(np.concatenate([self.r, other.r]),
                              np.concatenate([self.theta, other.theta]),
                              np.concatenate([self.amplitude, other.amplitude]),
                              self.label, self.seed, self.depth_window)


@dataclass
class ChannelData:
    """Demodulated per-element samples, indexed ``[transmit, element, time]``."""

    i: np.ndarray
    q: np.ndarray
    geometry: ArrayGeometry
    grid: ScanGrid
    role: str = "channel"

    def __post_init__(self):
        if self.i.shape != self.q.shape:
            raise ShapeError(f"I shape {self.i.shape} != Q shape {self.q.shape}")
        if self.i.ndim != 3:
            raise ShapeError(f"expected [transmit, element, time], got {self.i.shape}")
        if not (np.all(np.isfinite(self.i)) and np.all(np.isfinite(self.q))):
            raise NumericalError("channel data contains non-finite values")

    @property
    def shape(self) -> tuple:
        return self.i.shape

    @property
    def transmit_count(self) -> int:
        return self.i.shape[0]

    def astype(self, dtype) -> "ChannelData":
        return ChannelData(self.i.astype(dtype), self.q.astype(dtype), self.geometry,
                           self.grid, self.role)

    def scaled(self, factor: float) -> "ChannelData":
        return ChannelData(self.i * factor, self.q * factor, self.geometry, self.grid, self.role)

    def complex(self) -> np.ndarray:
        return self.i + 1j * self.q


@dataclass(frozen=True)
class SpeckleParams:
    """Speckle-field recipe: density in scatterers/m^2, window in m, sector width in rad."""

    density: float
    depth_window: tuple
    sector: float

    def to_dict(self) -> dict:
        return {"density": self.density, "depth_window": list(self.depth_window),
                "sector": self.sector}

    @classmethod
    def from_dict(cls, d: dict) -> "SpeckleParams":
        return cls(float(d["density"]), tuple(d["depth_window"]), float(d["sector"]))


# Stock configurations ----------------------------------------------------

def default_geometry() -> ArrayGeometry:
    """64 elements at half-wavelength pitch, 2.5 MHz, 5 MHz demodulated sampling."""
    return ArrayGeometry.uniform(64, sample_count=1024)


def default_grid() -> ScanGrid:
    return ScanGrid(140, LINE_STEP)


def small_geometry() -> ArrayGeometry:
    """16 elements, 256 samples: the geometry used by oracle and gradient tests."""
    return ArrayGeometry.uniform(16, sample_count=256)


def small_grid() -> ScanGrid:
    return ScanGrid(28, LINE_STEP)


def default_speckle(grid: ScanGrid | None = None) -> SpeckleParams:
    grid = grid or default_grid()
    return SpeckleParams(density=2.0e7, depth_window=(0.010, 0.080), sector=grid.sector_width)


def small_speckle(grid: ScanGrid | None = None) -> SpeckleParams:
    grid = grid or small_grid()
    return SpeckleParams(density=2.0e7, depth_window=(0.005, 0.036), sector=grid.sector_width)


# Phantoms ----------------------------------------------------------------

def wedge_area(depth_window, sector: float) -> float:
    lo, hi = depth_window
    return 0.5 * sector * (hi * hi - lo * lo)


def _check_window(depth_window, sector):
    lo, hi = depth_window
    if not (0 <= lo < hi) or not np.isfinite(hi):
        raise ConfigurationError(f"depth_window {depth_window!r} is degenerate")
    if not sector > 0:
        raise ConfigurationError(f"sector {sector!r} must be positive")


def make_speckle_phantom(density: float, depth_window, sector: float, seed: int) -> ScattererField:
    """Poisson number of scatterers, uniform by area in the wedge, N(0, 1) reflectivity.

    A zero density yields an empty field.
    """
    _check_window(depth_window, sector)
    if not density >= 0 or not np.isfinite(density):
        raise ConfigurationError(f"density {density!r} must be a non-negative number")
    rng = np.random.default_rng(seed)
    lo, hi = depth_window
    count = rng.poisson(density * wedge_area(depth_window, sector))
    r = np.sqrt(rng.uniform(lo * lo, hi * hi, count))
    theta = rng.uniform(-sector / 2.0, sector / 2.0, count)
    amp = rng.standard_normal(count)
    # uniform() is half-open; keep the window strictly open at the lower edge
    r = np.where(r <= lo, np.nextafter(lo, hi), r)
    return ScattererField(r, theta, amp, "speckle", seed, tuple(depth_window))


def _polar_to_xz(r, theta):
    return r * np.sin(theta), r * np.cos(theta)


def make_cyst_phantom(base: SpeckleParams, cyst_center, cyst_radius: float,
                      point_targets=(), seed: int = 0) -> ScattererField:
    """Speckle with an anechoic disc removed and bright point targets added.

    ``cyst_center`` and each point target are ``(range m, angle rad)``.
    """
    r0, th0 = cyst_center
    lo, hi = base.depth_window
    if not (lo < r0 < hi) or abs(th0) > base.sector / 2.0:
        raise ConfigurationError(f"cyst centre {cyst_center!r} lies outside the sector")
    if cyst_radius < 0:
        raise ConfigurationError("cyst_radius must be non-negative")
    fld = make_speckle_phantom(base.density, base.depth_window, base.sector, seed)
    if cyst_radius > 0 and len(fld):
        cx, cz = _polar_to_xz(r0, th0)
        x, z = fld.x, fld.z
        fld = fld.subset(np.hypot(x - cx, z - cz) >= cyst_radius)
    if len(point_targets):
        pts = np.asarray(point_targets, dtype=np.float64).reshape(-1, 2)
        for pr, pth in pts:
            if not (lo < pr < hi) or abs(pth) > base.sector / 2.0:
                raise ConfigurationError(f"point target {(pr, pth)!r} lies outside the sector")
        extra = ScattererField(pts[:, 0], pts[:, 1], np.full(len(pts), POINT_TARGET_GAIN))
        fld = fld.merged(extra)
    fld.label = "cyst"
    return fld


def make_cardiac_like_phantom(base: SpeckleParams, seed: int) -> ScattererField:
    """Speckle with 2-3 anechoic elliptical cavities and a brighter wall band.

    A coarse stand-in for cardiac anatomy: cavities play the blood pools, the
    band around them the myocardium.
    """
    rng = np.random.default_rng([seed, 0xCA7D])
    fld = make_speckle_phantom(base.density, base.depth_window, base.sector, seed)
    lo, hi = base.depth_window
    half = base.sector / 2.0
    n_cav = int(rng.integers(2, 4))
    x, z = fld.x, fld.z
    keep = np.ones(len(fld), dtype=bool)
    gain = np.ones(len(fld))
    span = hi - lo
    for _ in range(n_cav):
        rc = rng.uniform(lo + 0.2 * span, hi - 0.15 * span)
        tc = rng.uniform(-0.6 * half, 0.6 * half)
        cx, cz = _polar_to_xz(rc, tc)
        ax = rng.uniform(0.3, 0.9) * rc * half        # lateral semi-axis
        az = rng.uniform(0.04, 0.10) * span           # axial semi-axis
        rho = np.hypot((x - cx) / ax, (z - cz) / az)
        keep &= rho >= 1.0
        gain = np.where((rho >= 1.0) & (rho < 1.6), 2.0, gain)
    fld = ScattererField(fld.r, fld.theta, fld.amplitude * gain, "cardiac", seed, fld.depth_window)
    return fld.subset(keep)


# Simulation --------------------------------------------------------------

def simulate_channel_data(fld: ScattererField, geom: ArrayGeometry, grid: ScanGrid,
                          pulse: PulseSpec) -> ChannelData:
    """Focused single-line transmits: one ``[element, time]`` record per grid line.

    Returns float64 I/Q of shape ``[L, E, T]``.
    """
    t_end = (geom.sample_count - 1) / geom.sample_rate
    r_max = fld.depth_window[1] if fld.depth_window is not None else (
        float(fld.r.max()) if len(fld) else 0.0)
    if 2.0 * r_max / geom.speed_of_sound > t_end:
        raise ConfigurationError(
            f"time axis ends at {t_end:.3e} s, shorter than the two-way time "
            f"{2.0 * r_max / geom.speed_of_sound:.3e} s to r_max={r_max} m")
    shape = (grid.line_count, geom.element_count, geom.sample_count)
    out_i = np.zeros(shape)
    out_q = np.zeros(shape)
    if len(fld):
        kernels.simulate_accumulate(
            out_i, out_q, np.ascontiguousarray(grid.line_angles), fld.r, fld.theta,
            fld.amplitude, geom.elements, float(geom.speed_of_sound), float(geom.omega0),
            float(geom.sample_rate), float(pulse.envelope_sigma), float(pulse.tx_beam_sigma),
            PULSE_HALF_WINDOW * pulse.envelope_sigma * geom.sample_rate)
    if not (np.all(np.isfinite(out_i)) and np.all(np.isfinite(out_q))):
        raise NumericalError("simulation produced non-finite samples")
    return ChannelData(out_i, out_q, geom, grid, "sla")


# JSON configuration ------------------------------------------------------

def load_config(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def simulation_setup(cfg: dict):
    """Build ``(geometry, grid, pulse, speckle)`` from a JSON-style dict.

    Recognised keys mirror the type fields; ``"preset": "small"`` starts from
    the small-test geometry instead of the default one.
    """
    small = cfg.get("preset", "default") == "small"
    geom = ArrayGeometry.from_dict(cfg["geometry"]) if "geometry" in cfg else (
        small_geometry() if small else default_geometry())
    grid = ScanGrid.from_dict(cfg["grid"]) if "grid" in cfg else (
        small_grid() if small else default_grid())
    pulse = PulseSpec.from_dict(cfg["pulse"]) if "pulse" in cfg else PulseSpec.for_aperture(geom)
    speckle = SpeckleParams.from_dict(cfg["speckle"]) if "speckle" in cfg else (
        small_speckle(grid) if small else default_speckle(grid))
    return geom, grid, pulse, speckle


def write_config(path, cfg: dict) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True))
