"""Image-quality measures: PSNR, SSIM, L1, contrast and contrast-to-noise.

PSNR and SSIM operate on 8-bit log-compressed display images, L1, Cr and CNR
on envelope images. Frames are evaluated independently; aggregation happens
in :class:`MetricsReport` in a fixed order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from echobeam.errors import ConfigurationError, EchobeamError, ShapeError
from echobeam.rxpipeline import log_compress

PSNR_CAP = 99.0
PEAK = 255.0
TARGET = "TARGET"
BACKGROUND = "BACKGROUND"


class UndefinedMetric(EchobeamError):
    """A contrast measure has no value for the given ROIs (the message says why)."""


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def display_image(env, dynamic_range_db: float = 60.0) -> np.ndarray:
    """Envelope -> 8-bit log-compressed display image (uint8)."""
    return np.rint(log_compress(env, dynamic_range_db)).astype(np.uint8)


def psnr(pred, ref, peak: float = PEAK, cap: float = PSNR_CAP) -> float:
    a, b = _pair(pred, ref)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(peak * peak / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalised 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x * x / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, taps):
    """Separable 'valid' correlation with ``taps`` along both axes."""
    n = taps.size
    rows = np.lib.stride_tricks.sliding_window_view(img, n, axis=0) @ taps
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=1) @ taps


def ssim_map(pred, ref, data_range: float = PEAK, size: int = 11, sigma: float = 1.5,
             k1: float = 0.01, k2: float = 0.03) -> np.ndarray:
    a, b = _pair(pred, ref)
    if a.ndim != 2 or min(a.shape) < size:
        raise ConfigurationError(f"image {a.shape} is smaller than the {size}x{size} window")
    taps = gaussian_window(size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = _filter_valid(a, taps)
    mu_b = _filter_valid(b, taps)
    var_a = _filter_valid(a * a, taps) - mu_a * mu_a
    var_b = _filter_valid(b * b, taps) - mu_b * mu_b
    cov = _filter_valid(a * b, taps) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(pred, ref, **kw) -> float:
    """Mean local SSIM over all window positions fully inside the image."""
    return float(np.mean(ssim_map(pred, ref, **kw)))


def l1_metric(pred_env, ref_env) -> float:
    a, b = _pair(pred_env, ref_env)
    return float(np.mean(np.abs(a - b)))


@dataclass(frozen=True)
class RoiCircle:
    """Disc in (line index, sample index) coordinates."""

    line: float
    sample: float
    radius: float
    role: str = TARGET

    def __post_init__(self):
        if self.role not in (TARGET, BACKGROUND):
            raise ConfigurationError(f"ROI role must be {TARGET} or {BACKGROUND}")
        if not self.radius > 0:
            raise ConfigurationError("ROI radius must be positive")

    def check_inside(self, shape) -> None:
        n_lines, n_t = shape
        if (self.line - self.radius < 0 or self.line + self.radius > n_lines - 1
                or self.sample - self.radius < 0 or self.sample + self.radius > n_t - 1):
            raise ConfigurationError(f"ROI {self} does not fit inside a {shape} image")

    def mask(self, shape) -> np.ndarray:
        self.check_inside(shape)
        li, si = np.ogrid[:shape[0], :shape[1]]
        return (li - self.line) ** 2 + (si - self.sample) ** 2 <= self.radius ** 2

    def to_dict(self) -> dict:
        return {"line": self.line, "sample": self.sample, "radius": self.radius,
                "role": self.role}

    @classmethod
    def from_dict(cls, d: dict) -> "RoiCircle":
        return cls(float(d["line"]), float(d["sample"]), float(d["radius"]),
                   d.get("role", TARGET))


def _roi_stats(img, roi):
    vals = np.asarray(img, dtype=np.float64)[roi.mask(np.shape(img))]
    return float(vals.mean()), float(vals.var())


def contrast_cr(img, target: RoiCircle, background: RoiCircle) -> float:
    """``20 log10(mean_target / mean_background)`` on an envelope image."""
    mt, _ = _roi_stats(img, target)
    mb, _ = _roi_stats(img, background)
    if mb == 0.0:
        raise UndefinedMetric("background mean is zero")
    if mt == 0.0:
        raise UndefinedMetric("target mean is zero")
    return 20.0 * math.log10(mt / mb)


def cnr(img, target: RoiCircle, background: RoiCircle) -> float:
    mt, vt = _roi_stats(img, target)
    mb, vb = _roi_stats(img, background)
    if vt + vb == 0.0:
        raise UndefinedMetric("both ROIs have zero variance")
    return abs(mt - mb) / math.sqrt(vt + vb)


def difference_image(pred, ref, scale=(0.0, 100.0)) -> np.ndarray:
    """Absolute display-domain difference clamped to ``scale``."""
    a, b = _pair(pred, ref)
    return np.clip(np.abs(a - b), scale[0], scale[1])


def frame_metrics(frame_id: str, pred_env, ref_env, rois=None) -> dict:
    """All measures for one frame; Cr/CNR are None (with a reason) when undefined."""
    row = {"id": frame_id,
           "psnr": psnr(display_image(pred_env), display_image(ref_env)),
           "ssim": ssim(display_image(pred_env), display_image(ref_env)),
           "l1": l1_metric(pred_env, ref_env),
           "cr": None, "cnr": None}
    if rois:
        for key, fn in (("cr", contrast_cr), ("cnr", cnr)):
            try:
                row[key] = fn(pred_env, rois[TARGET], rois[BACKGROUND])
            except UndefinedMetric as exc:
                row[key + "_missing"] = str(exc)
    return row


@dataclass
class MetricsReport:
    setting: str
    frames: list = field(default_factory=list)
    roi: dict = field(default_factory=dict)

    def add(self, row: dict) -> None:
        self.frames.append(row)

    @property
    def mean(self) -> dict:
        out = {}
        for key in ("psnr", "ssim", "l1", "cr", "cnr"):
            vals = [r[key] for r in self.frames if r.get(key) is not None]
            out[key] = float(np.mean(vals)) if vals else None
        return out

    def to_dict(self) -> dict:
        return {"setting": self.setting, "frames": self.frames, "mean": self.mean,
                "roi": self.roi}

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(d["setting"], list(d.get("frames", [])), dict(d.get("roi", {})))
