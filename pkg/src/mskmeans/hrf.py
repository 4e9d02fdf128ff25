"""FIR estimation of per-cluster task responses and activation ranking."""
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import normalize_rows
from .errors import InvalidInput


@dataclass
class FirDesign:
    matrix: np.ndarray  # T x (L [+ 1])
    onsets: list
    lags: int
    intercept: bool

    @property
    def lag_columns(self):
        return self.matrix[:, : self.lags]


@dataclass
class HrfEstimate:
    betas: np.ndarray
    intercept: Optional[float]
    residual_norm: float
    rank: int


def fir_design(t_points, onsets, lags=30, intercept=True):
    """One indicator column per post-onset lag (plus an optional constant column).

    Entry ``(t, j)`` is 1 when ``t - onset == j`` for some onset; lags that run
    past the end of the series are simply absent.
    """
    onsets = sorted(int(o) for o in onsets)
    if not onsets:
        raise InvalidInput("FIR design needs at least one onset")
    if lags < 1:
        raise InvalidInput("lags must be at least 1")
    if onsets[0] < 0 or onsets[-1] >= t_points:
        raise InvalidInput(f"onsets must lie in [0, {t_points})")
    x = np.zeros((t_points, lags + int(intercept)))
    for onset in onsets:
        span = min(lags, t_points - onset)
        x[onset + np.arange(span), np.arange(span)] = 1.0
    if intercept:
        x[:, lags] = 1.0
    return FirDesign(x, onsets, lags, intercept)


def fit_hrf(y, design, percent_change=False):
    """Minimum-norm least squares of ``y`` on the FIR design (SVD-based).

    ``percent_change`` rescales the lag betas to percent of the temporal
    mean of ``y``.
    """
    y = np.asarray(y, dtype=np.float64)
    x = design.matrix
    if y.shape != (x.shape[0],):
        raise InvalidInput(f"series length {y.shape} does not match design rows {x.shape[0]}")
    coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < x.shape[1]:
        warnings.warn(f"FIR design is rank deficient ({rank} < {x.shape[1]})", stacklevel=2)
    resid = y - x @ coef
    betas = coef[: design.lags].copy()
    if percent_change:
        mean = y.mean()
        if mean == 0:
            raise InvalidInput("percent change undefined for a zero-mean series")
        betas *= 100.0 / mean
    icpt = float(coef[design.lags]) if design.intercept else None
    return HrfEstimate(betas, icpt, float(np.linalg.norm(resid)), int(rank))


def fit_clusters(representatives, design, percent_change=False):
    return [fit_hrf(r, design, percent_change) for r in np.atleast_2d(representatives)]


@dataclass
class ActivationReport:
    correlations: np.ndarray  # index c-1 for cluster c
    primary: int
    secondary: Optional[list]
    anticorrelated: list
    threshold: float
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "correlations": {str(c + 1): float(r) for c, r in enumerate(self.correlations)},
            "primary": self.primary,
            "secondary": self.secondary,
            "anticorrelated": self.anticorrelated,
            "secondary_threshold": self.threshold,
            "notes": self.notes,
        }


def rank_activation(parcellation, paradigm, secondary_threshold=0.4, tree=None):
    """Rank clusters by the correlation of their representative with the paradigm.

    Primary is the highest correlation (lowest label on ties). Secondary
    clusters correlate at ``secondary_threshold`` or above, are not primary,
    and every tree node they were built from converged before the last stage.
    Without a tree, secondary classification is unavailable (None).
    """
    reps = np.atleast_2d(np.asarray(parcellation.representatives, dtype=np.float64))
    paradigm = np.asarray(paradigm, dtype=np.float64)
    if reps.shape[1] != paradigm.size:
        raise InvalidInput("representatives and paradigm differ in length")
    tree = tree if tree is not None else parcellation.tree
    r = np.clip(normalize_rows(reps) @ normalize_rows(paradigm[None, :])[0], -1.0, 1.0)
    primary = int(np.argmax(r)) + 1
    anti = [c + 1 for c in np.flatnonzero(r <= -secondary_threshold)]
    notes = []
    if tree is None:
        secondary = None
        notes.append("no hierarchy tree: secondary regions not classified")
    else:
        early = {}
        for node_id, label in tree.node_labels.items():
            early[label] = early.get(label, True) and tree.early_converged(node_id)
        secondary = [
            c + 1 for c in np.flatnonzero(r >= secondary_threshold)
            if c + 1 != primary and early.get(c + 1, False)
        ]
    return ActivationReport(r, primary, secondary, anti, secondary_threshold, notes)
