"""Residual-based depth map repair.

The repair contract is additive: a predictor maps a captured depth map to a
per-pixel residual, and repaired = captured + residual. The supervision
residual for a simulated/captured pair is sim - captured, so applying it
reproduces the simulated map bit-exactly on valid pixels (residuals are kept
in float64, where the difference of two float32 depths is exact).

Depth values are millimeters; 0 marks a missing pixel. A ResidualMap's
valid_mask says where the residual is defined; apply_repair only touches
those pixels.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .geometry import CameraIntrinsics

logger = logging.getLogger(__name__)

# Jump between valid 4-neighbors that counts as a depth discontinuity.
EDGE_GRAD_MM = 20.0

# Valid depths are kept at or above this after noise, so corruption never
# silently invalidates a pixel.
MIN_VALID_MM = 0.001

_MEDIAN_WINDOW = 5
_FILL_MIN_NEIGHBORS = 6


@dataclass
class DepthMap:
    """H x W depth in millimeters (float32), 0 = missing, plus intrinsics."""

    values: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError(f"depth values must be 2-D, got {self.values.shape}")
        if self.values.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError(
                f"depth shape {self.values.shape} disagrees with intrinsics "
                f"({self.intrinsics.height}, {self.intrinsics.width})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("depth values must be finite")
        if self.values.size and self.values.min() < 0:
            raise ValueError("depth values must be >= 0")

    @property
    def valid_mask(self) -> np.ndarray:
        return self.values > 0

    @property
    def shape(self):
        return self.values.shape


@dataclass
class ResidualMap:
    """Signed per-pixel depth correction (float64 mm) with a validity mask."""

    values: np.ndarray
    valid_mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
        if self.values.shape != self.valid_mask.shape or self.values.ndim != 2:
            raise ValueError("residual values and valid_mask must share a 2-D shape")
        if not np.all(np.isfinite(self.values[self.valid_mask])):
            raise ValueError("residual must be finite on valid pixels")


@dataclass
class NoiseModel:
    """Synthetic capture-noise parameters.

    Per-pixel Gaussian noise with std sigma0 + depth_gain * z^2 (z in meters),
    extra edge_sigma noise within edge_band pixels of depth discontinuities,
    and missing-pixel holes at hole_rate.
    """

    sigma0: float = 1.0
    depth_gain: float = 2.0
    edge_band: int = 2
    edge_sigma: float = 4.0
    hole_rate: float = 0.005
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma0", "depth_gain", "edge_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.edge_band < 0:
            raise ValueError("edge_band must be non-negative")
        if not 0.0 <= self.hole_rate <= 1.0:
            raise ValueError("hole_rate must be in [0, 1]")


def _check_same_shape(a: DepthMap, b: DepthMap):
    if a.shape != b.shape:
        raise ValueError(f"depth maps disagree in shape: {a.shape} vs {b.shape}")


def make_residual_label(sim: DepthMap, real: DepthMap) -> ResidualMap:
    """Supervision residual sim - real, valid where both inputs are valid."""
    _check_same_shape(sim, real)
    valid = sim.valid_mask & real.valid_mask
    values = sim.values.astype(np.float64) - real.values.astype(np.float64)
    values[~valid] = 0.0
    return ResidualMap(values, valid)


def apply_repair(real: DepthMap, residual: ResidualMap) -> DepthMap:
    """Add the residual where it is valid; other pixels pass through.

    Negative results are clamped to 0 (logged, since a clamp breaks the
    additive identity at that pixel).
    """
    if real.shape != residual.values.shape:
        raise ValueError(
            f"residual shape {residual.values.shape} disagrees with depth {real.shape}"
        )
    out = real.values.astype(np.float64)
    out[residual.valid_mask] += residual.values[residual.valid_mask]
    negative = out < 0
    n_clamped = int(np.count_nonzero(negative))
    if n_clamped:
        logger.warning("apply_repair clamped %d negative depths to 0", n_clamped)
        out[negative] = 0.0
    return DepthMap(out.astype(np.float32), real.intrinsics)


def corrupt(sim: DepthMap, model: NoiseModel) -> DepthMap:
    """Synthesize a noisy capture of a clean depth map.

    Adds depth-dependent Gaussian noise everywhere, extra noise in a band
    around depth discontinuities, and random holes. Deterministic for a fixed
    seed: all random fields are drawn at full frame size in a fixed order, so
    the sample stream does not depend on image content. With hole_rate 0 the
    valid mask is preserved exactly.
    """
    vals = sim.values.astype(np.float64)
    valid = vals > 0
    z_m = vals / 1000.0
    sigma = model.sigma0 + model.depth_gain * z_m * z_m

    rng = np.random.default_rng(model.seed)
    noise = rng.standard_normal(vals.shape) * sigma
    edge_noise = rng.standard_normal(vals.shape) * model.edge_sigma
    hole_draw = rng.random(vals.shape)

    out = vals.copy()
    out[valid] += noise[valid]

    band = _edge_band_mask(vals, valid, model.edge_band)
    sel = valid & band
    out[sel] += edge_noise[sel]

    out[valid] = np.maximum(out[valid], MIN_VALID_MM)
    out[~valid] = 0.0
    out[hole_draw < model.hole_rate] = 0.0
    return DepthMap(out.astype(np.float32), sim.intrinsics)


def _edge_band_mask(vals, valid, band_px) -> np.ndarray:
    """Pixels within band_px of a depth discontinuity between valid neighbors."""
    edge = np.zeros(vals.shape, dtype=bool)
    jump_x = (np.abs(np.diff(vals, axis=1)) > EDGE_GRAD_MM) & valid[:, 1:] & valid[:, :-1]
    edge[:, 1:] |= jump_x
    edge[:, :-1] |= jump_x
    jump_y = (np.abs(np.diff(vals, axis=0)) > EDGE_GRAD_MM) & valid[1:, :] & valid[:-1, :]
    edge[1:, :] |= jump_y
    edge[:-1, :] |= jump_y
    if band_px > 0 and edge.any():
        edge = ndimage.binary_dilation(edge, iterations=band_px)
    return edge


def rmse(pred: DepthMap, gt: DepthMap) -> float:
    """Root-mean-square difference in millimeters over jointly valid pixels."""
    _check_same_shape(pred, gt)
    joint = pred.valid_mask & gt.valid_mask
    if not joint.any():
        raise ValueError("no jointly valid pixels")
    diff = pred.values.astype(np.float64)[joint] - gt.values.astype(np.float64)[joint]
    return float(np.sqrt(np.mean(diff * diff)))


def smoothing_repairer(real: DepthMap) -> ResidualMap:
    """Median-smoothing baseline predictor.

    Residual = 5x5 valid-pixel median minus the input at valid pixels. Hole
    pixels with at least 6 valid neighbors in the window get the median as
    their residual, so apply_repair fills them.
    """
    vals = real.values.astype(np.float64)
    valid = vals > 0
    pad = _MEDIAN_WINDOW // 2
    padded = np.pad(np.where(valid, vals, np.nan), pad, constant_values=np.nan)
    windows = sliding_window_view(padded, (_MEDIAN_WINDOW, _MEDIAN_WINDOW))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN windows
        med = np.nanmedian(windows, axis=(-2, -1))
    counts = np.sum(~np.isnan(windows), axis=(-2, -1))

    values = np.zeros(vals.shape, dtype=np.float64)
    mask = np.zeros(vals.shape, dtype=bool)

    smooth = valid & (counts > 0)
    values[smooth] = med[smooth] - vals[smooth]
    mask |= smooth

    fill = ~valid & (counts >= _FILL_MIN_NEIGHBORS)
    values[fill] = med[fill]
    mask |= fill
    return ResidualMap(values, mask)
