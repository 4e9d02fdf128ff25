"""Synthetic data with known ground truth.

Two generators: a 2-D grid of sinusoid regions with white Gaussian noise at a
requested SNR, and a block-design task volume whose responding voxels carry a
known lag response.
"""
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.stats import gamma

from .core import make_rng
from .errors import InvalidInput
from .volio import LabelVolume, MaskVolume, Volume4D, VolumeGeometry

DEFAULT_FREQS = (0.65, 0.7, 0.7, 0.8, 0.5, 0.9)
# fixed phases for DEFAULT_FREQS under which no two region series correlate
# above 0.5 in magnitude, so a noiseless grid is recoverable at CT = 0.7
SEPARABLE_PHASES = (0.3, 4.85, 3.8, 4.46, 3.21, 2.09)


def default_region_map(width=8, height=8):
    """Six rectangles: two row bands (y < height/2 and the rest) by three x bands of widths 3/3/2."""
    if width < 3 or height < 2:
        raise InvalidInput("default region map needs at least a 3 x 2 grid")
    x_edges = [0, round(width * 3 / 8), round(width * 6 / 8), width]
    out = np.zeros((width, height), dtype=np.int64)
    for row, (y0, y1) in enumerate(((0, height // 2), (height // 2, height))):
        for col in range(3):
            out[x_edges[col]:x_edges[col + 1], y0:y1] = 1 + 3 * row + col
    return out


@dataclass
class GridSpec:
    """Sinusoid-region grid.

    ``region_map`` is indexed ``[x, y]`` with ids 1..R. ``phases`` of None
    draws one uniform phase per region from the seed. ``snr`` is the ratio of
    the noiseless region series' sample standard deviation to the noise
    standard deviation; ``math.inf`` means no noise.
    """

    width: int = 8
    height: int = 8
    region_map: Optional[np.ndarray] = None
    t_points: int = 50
    fs: float = 10.0
    freqs: tuple = DEFAULT_FREQS
    phases: Optional[tuple] = None
    snr: float = math.inf
    voxel_mm: float = 1.0

    def __post_init__(self):
        if self.region_map is None:
            self.region_map = default_region_map(self.width, self.height)
        self.region_map = np.asarray(self.region_map, dtype=np.int64)
        if self.region_map.shape != (self.width, self.height):
            raise InvalidInput("region_map shape must be (width, height)")
        r = len(self.freqs)
        present = np.unique(self.region_map)
        if not np.array_equal(present, np.arange(1, r + 1)):
            raise InvalidInput(f"region_map must use every id 1..{r} and nothing else")
        if self.phases is not None and len(self.phases) != r:
            raise InvalidInput("need one phase per region")
        if self.t_points < 2 or not self.fs > 0:
            raise InvalidInput("t_points must be >= 2 and fs positive")
        if not self.snr > 0:
            raise InvalidInput("snr must be positive")

    @property
    def n_regions(self):
        return len(self.freqs)

    def to_dict(self):
        d = asdict(self)
        d["region_map"] = self.region_map.tolist()
        d["freqs"] = list(self.freqs)
        d["phases"] = None if self.phases is None else list(self.phases)
        d["snr"] = "inf" if math.isinf(self.snr) else self.snr
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "snr" in d:
            d["snr"] = float(d["snr"])
        for key in ("freqs", "phases"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def grid_generators(spec, phases):
    t = np.arange(spec.t_points)
    freqs = np.asarray(spec.freqs, dtype=np.float64)
    return np.sin(2 * np.pi * freqs[:, None] * t[None, :] / spec.fs + np.asarray(phases)[:, None])


def generate_grid(spec=None, seed=0):
    """Return ``(volume, truth, generators)`` for a sinusoid grid.

    ``volume`` is ``width x height x 1`` with ``t_points`` frames and
    ``truth`` is the region map as a label volume.
    """
    spec = spec or GridSpec()
    if spec.phases is None:
        phases = make_rng(seed, 0).uniform(0.0, 2 * np.pi, spec.n_regions)
    else:
        phases = np.asarray(spec.phases, dtype=np.float64)
    gens = grid_generators(spec, phases)
    clean = gens[spec.region_map - 1]  # [x, y, t]
    data = clean.copy()
    if not math.isinf(spec.snr):
        sigma_signal = gens.std(axis=1, ddof=1)
        sigma = (sigma_signal / spec.snr)[spec.region_map - 1]
        noise = make_rng(seed, 1).standard_normal(clean.shape)
        data = clean + noise * sigma[..., None]
    geom = VolumeGeometry(spec.width, spec.height, 1, spec.voxel_mm, spec.voxel_mm,
                          spec.voxel_mm, 1.0 / spec.fs)
    volume = Volume4D(geom, data[:, :, None, :])
    truth = LabelVolume(geom, spec.region_map[:, :, None])
    return volume, truth, gens


def canonical_hrf(tr=2.0, length_s=32.0):
    """Difference-of-gammas impulse response (peak 6 s, undershoot 16 s, ratio 1/6)."""
    t = np.arange(0.0, length_s, tr)
    h = gamma.pdf(t, 6) - gamma.pdf(t, 16) / 6.0
    return h / np.abs(h).max()


def default_block_response(spec_on_trs=10, lags=30, tr=2.0):
    """Response to one ON block: boxcar convolved with the canonical HRF, peak 1."""
    h = canonical_hrf(tr, lags * tr)
    resp = np.convolve(np.ones(spec_on_trs), h)[:lags]
    return resp / np.abs(resp).max()


@dataclass
class TaskSpec:
    """Block design; ``hrf_true`` is the lag response to each block onset.

    The defaults give 165 time points at TR 2 s: 15 rest TRs, then five
    30-TR blocks of 10 ON and 20 OFF. The trailing OFF period of the last
    block serves as the closing rest, so ``post_rest_s`` defaults to 0.
    """

    n_blocks: int = 5
    on_s: float = 20.0
    off_s: float = 40.0
    pre_rest_s: float = 30.0
    post_rest_s: float = 0.0
    tr_s: float = 2.0
    hrf_true: Optional[np.ndarray] = None
    noise_sigma: float = 0.0
    baseline: float = 0.0
    voxel_mm: float = 3.0

    def __post_init__(self):
        if self.hrf_true is None:
            self.hrf_true = default_block_response(self.on_trs, self.block_trs, self.tr_s)
        self.hrf_true = np.asarray(self.hrf_true, dtype=np.float64)
        if self.hrf_true.ndim != 1 or self.hrf_true.size < 1:
            raise InvalidInput("hrf_true must be a non-empty vector")
        if self.hrf_true.size > self.block_trs:
            raise InvalidInput(f"hrf_true longer than one block ({self.block_trs} TRs)")
        if self.noise_sigma < 0:
            raise InvalidInput("noise_sigma must be non-negative")
        self.n_timepoints  # validates divisibility

    def _trs(self, seconds):
        v = seconds / self.tr_s
        if abs(v - round(v)) > 1e-9:
            raise InvalidInput(f"{seconds} s is not a whole number of TRs")
        return int(round(v))

    @property
    def on_trs(self):
        return self._trs(self.on_s)

    @property
    def block_trs(self):
        return self._trs(self.on_s + self.off_s)

    @property
    def onsets(self):
        pre = self._trs(self.pre_rest_s)
        return [pre + b * self.block_trs for b in range(self.n_blocks)]

    @property
    def n_timepoints(self):
        total = self._trs(self.pre_rest_s + self.n_blocks * (self.on_s + self.off_s) + self.post_rest_s)
        if total < 1:
            raise InvalidInput("task has no time points")
        return total

    def paradigm(self):
        box = np.zeros(self.n_timepoints)
        for onset in self.onsets:
            box[onset:onset + self.on_trs] = 1.0
        return box

    def impulse_train(self):
        train = np.zeros(self.n_timepoints)
        train[self.onsets] = 1.0
        return train

    def clean_response(self):
        return np.convolve(self.impulse_train(), self.hrf_true)[: self.n_timepoints]

    def to_dict(self):
        d = asdict(self)
        d["hrf_true"] = self.hrf_true.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def generate_task(spec, responding_mask, seed=0):
    """Return ``(volume, paradigm)`` for a block-design task.

    Voxels flagged in ``responding_mask`` carry ``spec.clean_response()``;
    every voxel gets ``spec.baseline`` plus i.i.d. noise of ``spec.noise_sigma``.
    """
    if not isinstance(responding_mask, MaskVolume):
        raise InvalidInput("responding_mask must be a MaskVolume")
    g = responding_mask.geometry
    t = spec.n_timepoints
    geom = VolumeGeometry(g.nx, g.ny, g.nz, g.dx, g.dy, g.dz, spec.tr_s)
    data = np.full(g.shape + (t,), spec.baseline, dtype=np.float64)
    data[responding_mask.flags] += spec.clean_response()
    if spec.noise_sigma > 0:
        data += spec.noise_sigma * make_rng(seed, 2).standard_normal(data.shape)
    return Volume4D(geom, data), spec.paradigm()


def white_noise_matrix(n, t, seed=0):
    """N x T standard-normal series, used by the timing benchmarks."""
    return make_rng(seed, 3, n).standard_normal((n, t))
