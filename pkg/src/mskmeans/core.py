"""Correlation arithmetic, the voxel-by-time data matrix and seeded RNG streams.

Every correlation in the package goes through :func:`normalize_rows`: a series
is centred, then divided by its Euclidean norm, so that the Pearson
correlation of two series is the dot product of their normalized forms.
Constant series normalize to the zero vector and therefore have correlation 0
with everything (distance 1).

Random streams use numpy's PCG64 bit generator seeded through
``SeedSequence([seed, *keys])``. The same seed and key tuple reproduce the same
stream on every platform numpy supports.
"""
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, InvalidInput
from .volio import VolumeGeometry

# relative tolerance under which a centred series counts as constant
CONSTANT_RTOL = 1e-12


def _as_series(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInput(f"expected a 1-D series, got shape {x.shape}")
    if x.size < 2:
        raise InvalidInput("a time series needs at least 2 points")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("time series contains non-finite values")
    return x


def normalize_rows(x):
    """Centre and unit-normalize every row of a 2-D array.

    Rows whose centred norm is zero, or below ``1e-12 * max|row|``, map to
    the zero vector.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInput(f"expected a 2-D array, got shape {x.shape}")
    if x.shape[1] < 2:
        raise InvalidInput("time series need at least 2 points")
    centred = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->i", centred, centred))
    scale = np.abs(x).max(axis=1)
    flat = (norms == 0) | (norms <= CONSTANT_RTOL * scale)
    safe = np.where(flat, 1.0, norms)
    z = centred / safe[:, None]
    z[flat] = 0.0
    return z


def normalize_for_correlation(x):
    """Return ``(x - mean(x)) / ||x - mean(x)||``, or zeros for a constant series."""
    return normalize_rows(_as_series(x)[None, :])[0]


def pearson_correlation(x, y):
    x = _as_series(x)
    y = _as_series(y)
    if x.size != y.size:
        raise InvalidInput(f"length mismatch: {x.size} vs {y.size}")
    zx = normalize_for_correlation(x)
    zy = normalize_for_correlation(y)
    return float(np.clip(np.dot(zx, zy), -1.0, 1.0))


def correlation_distance(x, y):
    """``1 - pearson_correlation(x, y)``, in [0, 2]."""
    return 1.0 - pearson_correlation(x, y)


def correlation_matrix(a, b=None):
    """Clamped pairwise correlations between the rows of ``a`` and ``b``."""
    za = normalize_rows(a)
    zb = za if b is None else normalize_rows(b)
    return np.clip(za @ zb.T, -1.0, 1.0)


def mean_series(rows):
    """Elementwise mean of a non-empty collection of equal-length series."""
    rows = [np.asarray(r, dtype=np.float64) for r in rows]
    if not rows:
        raise EmptyInput("mean of an empty set of series")
    lengths = {r.shape for r in rows}
    if len(lengths) != 1:
        raise InvalidInput(f"series of unequal shape: {sorted(lengths)}")
    return np.mean(np.stack(rows), axis=0)


def make_rng(seed, *keys):
    """PCG64 generator for ``seed`` and an optional tuple of integer stream keys."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise InvalidInput(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *map(int, keys)])))


@dataclass
class TimeSeriesMatrix:
    """N voxel time series (rows) and the voxel coordinate of each row.

    Attributes
    ----------
    data : ndarray, shape (N, T)
    index_map : ndarray of int, shape (N, 3)
        ``(x, y, z)`` coordinate of every row inside ``geometry``.
    geometry : VolumeGeometry
    """

    data: np.ndarray
    index_map: np.ndarray
    geometry: VolumeGeometry

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.index_map = np.asarray(self.index_map, dtype=np.int64).reshape(-1, 3)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise InvalidInput(f"data must be a non-empty N x T matrix, got {self.data.shape}")
        if self.index_map.shape[0] != self.data.shape[0]:
            raise InvalidInput("index_map needs one coordinate per row")
        if not np.all(np.isfinite(self.data)):
            raise InvalidInput("data contains non-finite values")
        dims = np.array(self.geometry.shape)
        if np.any(self.index_map < 0) or np.any(self.index_map >= dims):
            raise InvalidInput("index_map coordinate outside the volume")
        flat = np.ravel_multi_index(self.index_map.T, self.geometry.shape, order="F")
        if np.unique(flat).size != flat.size:
            raise InvalidInput("index_map coordinates must be unique")

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def t(self):
        return self.data.shape[1]

    @classmethod
    def from_array(cls, data, geometry=None):
        """Wrap a bare N x T array, laying rows along x of a N x 1 x 1 volume."""
        data = np.asarray(data, dtype=np.float64)
        n = data.shape[0]
        if geometry is None:
            geometry = VolumeGeometry(n, 1, 1)
        coords = np.stack(np.unravel_index(np.arange(n), geometry.shape, order="F"), axis=1)
        return cls(data, coords, geometry)

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return TimeSeriesMatrix(self.data[rows], self.index_map[rows], self.geometry)
