"""Parcellation quality measures: similarity indices, homogeneity, tissue overlap."""
from dataclasses import dataclass

import numpy as np

from .clustering import Parcellation
from .core import TimeSeriesMatrix, normalize_rows
from .errors import InvalidInput
from .volio import LabelVolume


@dataclass
class SimilarityReport:
    per_cluster_si: np.ndarray
    best_match: np.ndarray  # beta label matched to each alpha cluster
    alpha_labels: np.ndarray
    msi: float
    mean_si: float

    def to_dict(self):
        return {
            "alpha_labels": self.alpha_labels.tolist(),
            "per_cluster_si": self.per_cluster_si.tolist(),
            "best_match": self.best_match.tolist(),
            "msi": self.msi,
            "mean_si": self.mean_si,
        }


def similarity_index(alpha_i, betas):
    """Best overlap score of one voxel set against a list of voxel sets.

    ``SI = max_j sqrt(|a & b_j|^2 / (|a| |b_j|))``; returns ``(si, j)`` with the
    lowest ``j`` on ties.
    """
    alpha_i = set(alpha_i)
    betas = [set(b) for b in betas]
    if not alpha_i or not betas or any(not b for b in betas):
        raise InvalidInput("similarity index needs non-empty voxel sets")
    best, best_j = -1.0, -1
    for j, b in enumerate(betas):
        si = np.sqrt(len(alpha_i & b) ** 2 / (len(alpha_i) * len(b)))
        if si > best:
            best, best_j = float(si), j
    return best, best_j


def contingency(a, b):
    """Overlap counts between the non-zero labels of two flat label arrays."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    la = np.unique(a[a > 0])
    lb = np.unique(b[b > 0])
    if la.size == 0 or lb.size == 0:
        raise InvalidInput("both parcellations need at least one labelled voxel")
    ia = np.searchsorted(la, a)
    ib = np.searchsorted(lb, b)
    both = (a > 0) & (b > 0)
    table = np.zeros((la.size, lb.size), dtype=np.int64)
    np.add.at(table, (ia[both], ib[both]), 1)
    size_a = np.bincount(ia[a > 0], minlength=la.size)
    size_b = np.bincount(ib[b > 0], minlength=lb.size)
    return table, la, lb, size_a, size_b


def compare_parcellations(alpha, beta):
    """Per-cluster SI of every alpha cluster against beta, plus mSI and mean SI.

    Both volumes must share grid dimensions; resample externally otherwise.
    Label 0 is background and ignored; cluster sizes count all voxels of the
    label, including voxels that are background in the other volume.
    """
    if isinstance(alpha, LabelVolume) and isinstance(beta, LabelVolume):
        if not alpha.geometry.same_grid(beta.geometry):
            raise InvalidInput(
                f"grid mismatch {alpha.geometry.shape} vs {beta.geometry.shape}; "
                "resample one parcellation onto the other's grid first"
            )
        a, b = alpha.labels, beta.labels
    else:
        a, b = np.asarray(alpha), np.asarray(beta)
        if a.shape != b.shape:
            raise InvalidInput("label arrays differ in shape")
    table, la, lb, size_a, size_b = contingency(a, b)
    # evaluated literally as sqrt(n^2 / (|a||b|)); integer counts are exact in float64
    si = np.sqrt(table.astype(np.float64) ** 2 / np.outer(size_a, size_b).astype(np.float64))
    best = np.argmax(si, axis=1)
    per = si[np.arange(la.size), best]
    return SimilarityReport(per, lb[best], la, float(per.max()), float(per.mean()))


def intra_cluster_correlation(parcellation, data):
    """Mean correlation of each cluster's voxels with its representative series.

    Returns ``(per_cluster, grand_mean)``; ``per_cluster[c-1]`` belongs to label c.
    """
    if not isinstance(data, TimeSeriesMatrix):
        data = TimeSeriesMatrix.from_array(data)
    if data.n != parcellation.row_labels.size or data.t != parcellation.representatives.shape[1]:
        raise InvalidInput("parcellation and data do not describe the same voxels")
    z = normalize_rows(data.data)
    zr = normalize_rows(parcellation.representatives)
    idx = parcellation.row_labels - 1
    corr = np.clip(np.einsum("ij,ij->i", z, zr[idx]), -1.0, 1.0)
    counts = np.bincount(idx, minlength=parcellation.k)
    per = np.bincount(idx, weights=corr, minlength=parcellation.k) / counts
    return per, float(per.mean())


@dataclass
class OverlapRow:
    label: int
    gm_frac: float
    wm_frac: float
    size: int


def tissue_overlap(parcellation, gm, wm):
    """Fraction of every cluster inside the grey- and white-matter masks.

    Rows are sorted by grey-matter fraction, descending (stable on label).
    """
    labels = parcellation.labels if isinstance(parcellation, Parcellation) else parcellation
    for m in (gm, wm):
        if not labels.geometry.same_grid(m.geometry):
            raise InvalidInput("tissue mask grid does not match the parcellation")
    lab = labels.labels.ravel()
    k = labels.k
    sizes = np.bincount(lab, minlength=k + 1)[1:]
    in_gm = np.bincount(lab[gm.flags.ravel()], minlength=k + 1)[1:]
    in_wm = np.bincount(lab[wm.flags.ravel()], minlength=k + 1)[1:]
    rows = [
        OverlapRow(c + 1, in_gm[c] / sizes[c], in_wm[c] / sizes[c], int(sizes[c]))
        for c in range(k)
        if sizes[c] > 0
    ]
    return sorted(rows, key=lambda r: -r.gm_frac)


def random_parcellation(geometry, k, rng, max_tries=1000):
    """Every voxel uniform on 1..k; redrawn until every label occurs."""
    if not 1 <= k <= geometry.n_voxels:
        raise InvalidInput(f"k must be in 1..{geometry.n_voxels}")
    for _ in range(max_tries):
        labels = rng.integers(1, k + 1, size=geometry.shape)
        if np.unique(labels).size == k:
            return LabelVolume(geometry, labels)
    raise InvalidInput(f"could not draw all {k} labels in {max_tries} tries")


def random_baseline(geometry, k, trials, rng):
    """mSI of independent random parcellation pairs; returns the per-trial values."""
    out = np.empty(trials)
    for t in range(trials):
        a = random_parcellation(geometry, k, rng)
        b = random_parcellation(geometry, k, rng)
        out[t] = compare_parcellations(a, b).msi
    return out
