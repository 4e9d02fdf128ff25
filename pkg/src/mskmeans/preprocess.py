"""Masking, vectorization, Gaussian smoothing and nuisance regression."""
import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre
from scipy import ndimage

from .core import TimeSeriesMatrix
from .errors import EmptyMask, InvalidInput
from .volio import MaskVolume, Volume4D

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass
class PreprocessConfig:
    mask_threshold: float = 0.0
    smooth_fwhm_mm: float = 0.0
    detrend_poly_order: int = 1
    regress_global: bool = True
    regress_top_pcs: int = 0

    def __post_init__(self):
        if not self.smooth_fwhm_mm >= 0:
            raise InvalidInput("smooth_fwhm_mm must be non-negative")
        if not 0 <= self.detrend_poly_order <= 10:
            raise InvalidInput("detrend_poly_order must be in 0..10")
        if self.regress_top_pcs < 0:
            raise InvalidInput("regress_top_pcs must be non-negative")


def mask_from_threshold(volume, threshold):
    """In-mask iff the voxel's temporal mean exceeds ``threshold``."""
    if not math.isfinite(threshold):
        raise InvalidInput("mask threshold must be finite")
    means = np.asarray(volume.data, dtype=np.float64).mean(axis=3)
    flags = means > threshold
    if not flags.any():
        raise EmptyMask(f"no voxel has temporal mean above {threshold}")
    return MaskVolume(volume.geometry, flags)


def _check_grid(a, b):
    if not a.same_grid(b):
        raise InvalidInput(f"geometry mismatch: {a.shape} vs {b.shape}")


def mask_coordinates(mask):
    """In-mask voxel coordinates, x fastest, then y, then z."""
    flat = np.flatnonzero(mask.flags.ravel(order="F"))
    return np.stack(np.unravel_index(flat, mask.geometry.shape, order="F"), axis=1)


def vectorize(volume, mask):
    _check_grid(volume.geometry, mask.geometry)
    if mask.count == 0:
        raise EmptyMask("mask has no voxels")
    coords = mask_coordinates(mask)
    rows = volume.data[coords[:, 0], coords[:, 1], coords[:, 2], :]
    return TimeSeriesMatrix(rows, coords, volume.geometry)


def devectorize(matrix, fill=0.0, dtype=None):
    """Scatter rows back into a volume; voxels without a row get ``fill``."""
    g = matrix.geometry
    out = np.full(g.shape + (matrix.t,), fill, dtype=dtype or matrix.data.dtype)
    c = matrix.index_map
    out[c[:, 0], c[:, 1], c[:, 2], :] = matrix.data
    return Volume4D(g, out)


def gaussian_kernel_1d(sigma):
    """Normalized Gaussian taps truncated at radius ``ceil(3 sigma)``."""
    radius = int(math.ceil(3.0 * sigma))
    if radius == 0:
        return np.ones(1)
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-0.5 * (offsets / sigma) ** 2)
    return taps / taps.sum()


def gaussian_smooth(volume, mask, fwhm_mm):
    """Separable per-frame Gaussian smoothing restricted to the mask.

    The kernel is renormalized at every voxel over the in-mask, in-bounds
    neighbours it touches (normalized convolution), so constant in-mask
    frames are preserved. Voxels outside the mask are returned untouched.
    """
    if not fwhm_mm >= 0:
        raise InvalidInput("fwhm must be non-negative")
    _check_grid(volume.geometry, mask.geometry)
    if fwhm_mm == 0:
        return Volume4D(volume.geometry, volume.data.copy())

    kernels = [gaussian_kernel_1d(fwhm_mm * FWHM_TO_SIGMA / size)
               for size in volume.geometry.voxel_size]

    def blur(arr):
        for axis, taps in enumerate(kernels):
            if taps.size > 1:
                arr = ndimage.correlate1d(arr, taps, axis=axis, mode="constant", cval=0.0)
        return arr

    weight = mask.flags.astype(np.float64)
    norm = blur(weight)
    inside = mask.flags
    out = np.array(volume.data, dtype=np.float64, copy=True)
    for t in range(volume.nt):
        frame = volume.data[..., t].astype(np.float64) * weight
        out[..., t][inside] = blur(frame)[inside] / norm[inside]
    return Volume4D(volume.geometry, out.astype(volume.data.dtype, copy=False))


def legendre_regressors(t_points, order):
    """Legendre polynomials of order 0..``order`` sampled on [-1, 1], one per column."""
    grid = np.linspace(-1.0, 1.0, t_points)
    return np.stack([legendre.legval(grid, np.eye(order + 1)[p]) for p in range(order + 1)], axis=1)


def nuisance_regressors(data, cfg):
    """Build the (unorthonormalized) T x m regressor matrix."""
    data = np.asarray(data, dtype=np.float64)
    cols = [legendre_regressors(data.shape[1], cfg.detrend_poly_order)]
    scale = float(np.sqrt(np.mean(np.einsum("ij,ij->i", data, data)))) or 1.0
    if cfg.regress_global:
        g = data.mean(axis=0)
        # a vanishing global signal (e.g. already regressed out) carries no direction
        if np.linalg.norm(g) > 1e-10 * scale:
            cols.append(g[:, None])
        else:
            warnings.warn("global signal is numerically zero; regressor dropped", stacklevel=3)
    if cfg.regress_top_pcs:
        centred = data - data.mean(axis=1, keepdims=True)
        _, s, vt = np.linalg.svd(centred, full_matrices=False)
        keep = min(cfg.regress_top_pcs, int(np.sum(s > 1e-10 * max(s[0], 1e-300))))
        if keep < cfg.regress_top_pcs:
            warnings.warn(f"only {keep} non-degenerate principal components available", stacklevel=3)
        if keep:
            cols.append(vt[:keep].T)
    return np.concatenate(cols, axis=1)


def orthonormal_basis(regressors, rtol=1e-10):
    """Orthonormal basis of the column span, dropping dependent columns with a warning."""
    cols = regressors / np.linalg.norm(regressors, axis=0, keepdims=True)
    u, s, _ = np.linalg.svd(cols, full_matrices=False)
    rank = int(np.sum(s > rtol * s[0]))
    if rank < cols.shape[1]:
        warnings.warn(
            f"{cols.shape[1] - rank} linearly dependent regressor(s) dropped", stacklevel=3
        )
    return u[:, :rank]


def detrend_and_regress(matrix, cfg):
    """Project every row off polynomial drift, global signal and top temporal PCs."""
    needed = cfg.detrend_poly_order + cfg.regress_top_pcs + int(cfg.regress_global) + 1
    if not matrix.t > needed:
        raise InvalidInput(f"need more than {needed} time points, got {matrix.t}")
    q = orthonormal_basis(nuisance_regressors(matrix.data, cfg))
    residual = matrix.data - (matrix.data @ q) @ q.T
    return TimeSeriesMatrix(residual, matrix.index_map.copy(), matrix.geometry)


def preprocess(volume, cfg, mask=None):
    """Mask, smooth and regress a 4-D volume; returns the matrix and the mask."""
    if mask is None:
        mask = mask_from_threshold(volume, cfg.mask_threshold)
    smoothed = gaussian_smooth(volume, mask, cfg.smooth_fwhm_mm)
    matrix = vectorize(smoothed, mask)
    return detrend_and_regress(matrix, cfg), mask
