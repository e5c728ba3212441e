"""Dual-pol covariance handling and the polarimetric vegetation index.

A C2 raster stores the per-pixel 2x2 Hermitian covariance of the (VV, VH)
scattering vector as four real bands: the two diagonal powers and the real
and imaginary parts of the off-diagonal term. Everything here works on
linear power; inputs must never arrive in dB.
"""

from __future__ import annotations

import datetime as dt
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .raster import Bundle, GridSpec, Orbit, Raster, load_bundle, save_bundle

log = logging.getLogger(__name__)

C2_BAND_NAMES = ("C11", "C22", "C12_re", "C12_im")

# A covariance sample is accepted as positive semidefinite when
# det >= -PSD_TOL * (trace/2)^2; float32 band storage perturbs an exactly
# singular determinant at about the 1e-7 relative level.
PSD_TOL = 1e-6

# Eigenvalue ratios below this are collapsed to rank one (lambda2 = 0).
# float32 storage cannot carry a genuine ratio this small, while single-look
# sample covariances are rank one by construction and must index to exactly 0.
RANK1_TOL = 1e-5

DPRVI_BAND_NAME = "DpRVI"


class CovarianceError(Exception):
    """Covariance input breaks positive semidefiniteness beyond tolerance."""


@dataclass(frozen=True)
class EigenPair:
    """Eigenvalues of a 2x2 Hermitian PSD matrix, descending order."""

    lambda1: float
    lambda2: float


@dataclass(frozen=True)
class DpParams:
    """Degree of polarization m, dominance beta, and eigenvalue ratio q."""

    m: float
    beta: float
    q: float


@dataclass
class C2Raster:
    """Per-pixel 2x2 covariance on a grid, stored as four float32 bands.

    A pixel is valid only when all four bands are finite; statistics and
    filters treat the matrix as a unit.
    """

    spec: GridSpec
    c11: np.ndarray
    c22: np.ndarray
    c12_re: np.ndarray
    c12_im: np.ndarray
    timestamp: Optional[dt.date] = None
    orbit: Optional[Orbit] = None

    def __post_init__(self) -> None:
        shape = (self.spec.height, self.spec.width)
        for name in ("c11", "c22", "c12_re", "c12_im"):
            arr = np.asarray(getattr(self, name), dtype=np.float32)
            if arr.shape != shape:
                raise ValueError(f"band {name} has shape {arr.shape}, grid wants {shape}")
            setattr(self, name, arr)

    def valid_mask(self) -> np.ndarray:
        return (np.isfinite(self.c11) & np.isfinite(self.c22)
                & np.isfinite(self.c12_re) & np.isfinite(self.c12_im))

    def validate(self) -> None:
        """Raise CovarianceError if any valid pixel is not PSD within tolerance."""
        valid = self.valid_mask()
        c11 = self.c11.astype(np.float64)
        c22 = self.c22.astype(np.float64)
        det = c11 * c22 - (self.c12_re.astype(np.float64) ** 2
                           + self.c12_im.astype(np.float64) ** 2)
        half_trace = 0.5 * (c11 + c22)
        bad = valid & ((c11 < 0) | (c22 < 0) | (det < -PSD_TOL * half_trace ** 2))
        n_bad = int(bad.sum())
        if n_bad:
            raise CovarianceError(
                f"{n_bad} of {int(valid.sum())} valid pixels violate positive "
                f"semidefiniteness beyond tolerance")


def save_c2(c2: C2Raster, path: str | Path) -> Path:
    bands = list(zip(C2_BAND_NAMES, (c2.c11, c2.c22, c2.c12_re, c2.c12_im)))
    return save_bundle(path, c2.spec, bands, timestamp=c2.timestamp, orbit=c2.orbit)


def load_c2(path: str | Path, *, validate: bool = True) -> C2Raster:
    b = load_bundle(path)
    if tuple(b.band_names) != C2_BAND_NAMES:
        raise ValueError(f"{path} holds bands {b.band_names}, "
                         f"a covariance bundle needs {list(C2_BAND_NAMES)}")
    c2 = C2Raster(b.spec, b.values[0], b.values[1], b.values[2], b.values[3],
                  timestamp=b.timestamp, orbit=b.orbit)
    if validate:
        c2.validate()
    return c2


def _block_mean(values: np.ndarray, valid: np.ndarray,
                win_x: int, win_y: int) -> np.ndarray:
    """Mean over valid samples in each win_y x win_x block, NaN when none."""
    h, w = values.shape
    hh, ww = h // win_y, w // win_x
    v = np.where(valid, values.astype(np.float64), 0.0)
    v = v[:hh * win_y, :ww * win_x].reshape(hh, win_y, ww, win_x)
    n = valid[:hh * win_y, :ww * win_x].reshape(hh, win_y, ww, win_x)
    sums = v.sum(axis=(1, 3))
    counts = n.sum(axis=(1, 3))
    out = np.full((hh, ww), np.nan, dtype=np.float64)
    np.divide(sums, counts, out=out, where=counts > 0)
    return out


def multilook(c2: C2Raster, win_x: int = 4, win_y: int = 1) -> C2Raster:
    """Average covariance matrices over non-overlapping win_x by win_y blocks.

    Output dimensions are the floor quotients; trailing rows and columns that
    do not fill a block are dropped. Pixel sizes scale by the window so the
    footprint stays put. Averaging PSD matrices keeps them PSD.
    """
    if win_x < 1 or win_y < 1:
        raise ValueError("multilook window must be at least 1x1")
    if win_x > c2.spec.width or win_y > c2.spec.height:
        raise ValueError(f"window {win_x}x{win_y} exceeds raster "
                         f"{c2.spec.width}x{c2.spec.height}")
    valid = c2.valid_mask()
    bands = [_block_mean(b, valid, win_x, win_y).astype(np.float32)
             for b in (c2.c11, c2.c22, c2.c12_re, c2.c12_im)]
    out_spec = replace(c2.spec,
                       width=c2.spec.width // win_x,
                       height=c2.spec.height // win_y,
                       pixel_size_x=c2.spec.pixel_size_x * win_x,
                       pixel_size_y=c2.spec.pixel_size_y * win_y)
    return C2Raster(out_spec, *bands, timestamp=c2.timestamp, orbit=c2.orbit)


def _window_mean(values: np.ndarray, valid: np.ndarray, win: int) -> np.ndarray:
    """Sliding mean over the valid part of a win x win window, via integral
    images so edges fall back to the window/raster intersection."""
    h, w = values.shape
    half = win // 2
    v = np.where(valid, values.astype(np.float64), 0.0)
    sat = np.zeros((h + 1, w + 1), dtype=np.float64)
    sat[1:, 1:] = v.cumsum(axis=0).cumsum(axis=1)
    cnt = np.zeros((h + 1, w + 1), dtype=np.int64)
    cnt[1:, 1:] = valid.astype(np.int64).cumsum(axis=0).cumsum(axis=1)

    rows = np.arange(h)
    cols = np.arange(w)
    r0 = np.clip(rows - half, 0, h)
    r1 = np.clip(rows + half + 1, 0, h)
    c0 = np.clip(cols - half, 0, w)
    c1 = np.clip(cols + half + 1, 0, w)

    def rect(table: np.ndarray) -> np.ndarray:
        return (table[np.ix_(r1, c1)] - table[np.ix_(r0, c1)]
                - table[np.ix_(r1, c0)] + table[np.ix_(r0, c0)])

    sums = rect(sat)
    counts = rect(cnt)
    out = np.full((h, w), np.nan, dtype=np.float64)
    np.divide(sums, counts, out=out, where=counts > 0)
    return out


def boxcar_filter(c2: C2Raster, win: int) -> C2Raster:
    """Square sliding-mean speckle filter with an odd window size."""
    if win < 1 or win % 2 == 0:
        raise ValueError(f"boxcar window must be odd and positive, got {win}")
    if win == 1:
        return C2Raster(c2.spec, c2.c11.copy(), c2.c22.copy(),
                        c2.c12_re.copy(), c2.c12_im.copy(),
                        timestamp=c2.timestamp, orbit=c2.orbit)
    valid = c2.valid_mask()
    bands = [_window_mean(b, valid, win).astype(np.float32)
             for b in (c2.c11, c2.c22, c2.c12_re, c2.c12_im)]
    return C2Raster(c2.spec, *bands, timestamp=c2.timestamp, orbit=c2.orbit)


def _eigen_arrays(c11: np.ndarray, c22: np.ndarray,
                  c12_re: np.ndarray, c12_im: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized closed-form eigenvalues; returns (l1, l2, psd_violation).

    Inputs must be float64. NaNs flow through; the violation mask marks
    finite pixels whose matrix is not PSD within tolerance.
    """
    trace = c11 + c22
    off_sq = c12_re ** 2 + c12_im ** 2
    det = c11 * c22 - off_sq
    half_trace = 0.5 * trace
    finite = np.isfinite(c11) & np.isfinite(c22) & np.isfinite(off_sq)
    bad = finite & ((c11 < 0) | (c22 < 0) | (det < -PSD_TOL * half_trace ** 2))

    # discriminant written as a sum of squares, immune to cancellation
    spread = np.sqrt((c11 - c22) ** 2 + 4.0 * off_sq)
    l1 = 0.5 * (trace + spread)
    with np.errstate(invalid="ignore", divide="ignore"):
        l2 = np.where(l1 > 0, np.maximum(det, 0.0) / np.where(l1 > 0, l1, 1.0), 0.0)
        # rank-one snap: ratios below tolerance are storage noise
        l2 = np.where(l2 < RANK1_TOL * l1, 0.0, l2)
    l1 = np.where(finite, l1, np.nan)
    l2 = np.where(finite, l2, np.nan)
    return l1, l2, bad


def eigen_decompose(c11: float, c22: float,
                    c12_re: float, c12_im: float) -> EigenPair:
    """Eigenvalues of [[c11, c12], [conj(c12), c22]] in closed form.

    Raises ValueError on non-finite input and CovarianceError when the
    matrix is not PSD within tolerance. A determinant that is negative
    inside tolerance is clamped so lambda2 never comes back below zero.
    """
    vals = (c11, c22, c12_re, c12_im)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"covariance entries must be finite, got {vals}")
    arr = [np.asarray([float(v)], dtype=np.float64) for v in vals]
    l1, l2, bad = _eigen_arrays(*arr)
    if bad[0]:
        raise CovarianceError(
            f"matrix (c11={c11}, c22={c22}, c12={c12_re}{c12_im:+}j) "
            "is not positive semidefinite within tolerance")
    return EigenPair(float(l1[0]), float(l2[0]))


def dp_params(eigen: EigenPair) -> DpParams:
    """Degree of polarization and dominance from an eigenvalue pair."""
    total = eigen.lambda1 + eigen.lambda2
    if total <= 0:
        raise ValueError("zero total power, polarization parameters undefined")
    m = (eigen.lambda1 - eigen.lambda2) / total
    beta = eigen.lambda1 / total
    q = eigen.lambda2 / eigen.lambda1
    return DpParams(m=m, beta=beta, q=q)


def dprvi_from_eigen(eigen: EigenPair) -> float:
    """Vegetation index 1 - m*beta; NaN when the pixel carries no power."""
    total = eigen.lambda1 + eigen.lambda2
    if total <= 0:
        return math.nan
    p = dp_params(eigen)
    return 1.0 - p.m * p.beta


def dprvi_grd(sigma_vh: float, sigma_vv: float) -> float:
    """Index from backscatter intensities when only GRD products exist.

    Uses the cross/co power ratio q = vh/vv, clamped into [0, 1]; the
    clamp keeps the index in range when vh noise exceeds vv. NaN when the
    co-pol power is zero.
    """
    if not (math.isfinite(sigma_vh) and math.isfinite(sigma_vv)):
        raise ValueError("backscatter intensities must be finite")
    if sigma_vh < 0 or sigma_vv < 0:
        raise ValueError("backscatter intensities are linear powers, must be >= 0")
    if sigma_vv == 0:
        return math.nan
    q = sigma_vh / sigma_vv
    if q > 1.0:
        log.debug("vh/vv ratio %.6g clamped to 1", q)
        q = 1.0
    return q * (q + 3.0) / ((q + 1.0) ** 2)


def dprvi_raster(c2: C2Raster) -> Raster:
    """Per-pixel index over a covariance raster.

    Nodata pixels stay nodata. Finite pixels that fail the PSD check are set
    to nodata and counted in a single warning instead of aborting the scene.
    """
    c11 = c2.c11.astype(np.float64)
    c22 = c2.c22.astype(np.float64)
    re = c2.c12_re.astype(np.float64)
    im = c2.c12_im.astype(np.float64)
    l1, l2, bad = _eigen_arrays(c11, c22, re, im)
    n_bad = int(bad.sum())
    if n_bad:
        log.warning("%d pixels violate the covariance constraints, set to nodata", n_bad)

    total = l1 + l2
    with np.errstate(invalid="ignore", divide="ignore"):
        m = (l1 - l2) / total
        beta = l1 / total
        index = 1.0 - m * beta
    index = np.where((total > 0) & ~bad, index, np.nan)
    return Raster(c2.spec, index.astype(np.float32), band_name=DPRVI_BAND_NAME,
                  timestamp=c2.timestamp, orbit=c2.orbit)
