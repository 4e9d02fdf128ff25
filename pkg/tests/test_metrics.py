import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mskmeans.clustering import MultistageConfig, build_parcellation, multistage_cluster
from mskmeans.core import TimeSeriesMatrix, make_rng
from mskmeans.errors import InvalidInput
from mskmeans.metrics import (
    compare_parcellations,
    intra_cluster_correlation,
    random_baseline,
    random_parcellation,
    similarity_index,
    tissue_overlap,
)
from mskmeans.preprocess import vectorize
from mskmeans.synth import SEPARABLE_PHASES, GridSpec, generate_grid
from mskmeans.volio import LabelVolume, MaskVolume, VolumeGeometry


def brute_report(a, b):
    """Direct per-voxel-set evaluation of the SI formula."""
    a, b = a.ravel(), b.ravel()
    sets_b = [set(np.flatnonzero(b == j).tolist()) for j in np.unique(b[b > 0])]
    per = []
    for i in np.unique(a[a > 0]):
        ai = set(np.flatnonzero(a == i).tolist())
        per.append(max(math.sqrt(len(ai & bj) ** 2 / (len(ai) * len(bj))) for bj in sets_b))
    return max(per), sum(per) / len(per), per


labels_pair = st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3)).flatmap(
    lambda s: st.tuples(hnp.arrays(np.int64, s, elements=st.integers(0, 4)),
                        hnp.arrays(np.int64, s, elements=st.integers(0, 4)))
).filter(lambda ab: (ab[0] > 0).any() and (ab[1] > 0).any())


@given(labels_pair)
def test_compare_matches_brute_force(ab):
    a, b = ab
    rep = compare_parcellations(a, b)
    msi, mean_si, per = brute_report(a, b)
    assert rep.msi == pytest.approx(msi, abs=1e-15)
    assert rep.mean_si == pytest.approx(mean_si, abs=1e-15)
    np.testing.assert_allclose(rep.per_cluster_si, per, atol=1e-15)
    assert 0 <= rep.mean_si <= rep.msi <= 1
    assert rep.msi == pytest.approx(compare_parcellations(b, a).msi, abs=1e-15)


def test_similarity_index_examples():
    assert similarity_index({1, 2}, [{5}, {1, 2}]) == (1.0, 1)
    assert similarity_index({1, 2}, [{5}, {6}])[0] == 0.0
    si, j = similarity_index({1, 2, 3, 4}, [{9}, {1, 2}])
    assert j == 1 and si == pytest.approx(0.70710678118654752)
    assert similarity_index({1}, [{1, 2}, {1, 3}])[1] == 0  # ties go to the lowest index
    with pytest.raises(InvalidInput):
        similarity_index(set(), [{1}])


def test_identical_and_nested():
    a = np.array([[1, 1, 2, 2], [3, 3, 3, 4]])
    rep = compare_parcellations(a, a)
    assert rep.msi == rep.mean_si == 1.0
    coarse = np.array([[1, 1, 1, 1], [2, 2, 2, 2]])
    rep = compare_parcellations(a, coarse)
    expected = [math.sqrt(2 / 4), math.sqrt(2 / 4), math.sqrt(3 / 4), math.sqrt(1 / 4)]
    np.testing.assert_allclose(rep.per_cluster_si, expected)


def test_grid_mismatch_mentions_resampling():
    a = LabelVolume(VolumeGeometry(2, 2, 1), np.ones((2, 2, 1)))
    b = LabelVolume(VolumeGeometry(2, 1, 1), np.ones((2, 1, 1)))
    with pytest.raises(InvalidInput, match="resample"):
        compare_parcellations(a, b)


def parc_from_rows(rows, labels):
    return build_parcellation(TimeSeriesMatrix.from_array(rows), np.asarray(labels))


def test_intra_cluster_correlation_examples():
    s = np.sin(np.arange(10.0))
    rows = np.stack([s, 2 * s + 1, np.cos(np.arange(10.0)), s, -s])
    per, grand = intra_cluster_correlation(parc_from_rows(rows, [1, 1, 2, 3, 3]), rows)
    np.testing.assert_allclose(per, [1.0, 1.0, 0.0], atol=1e-12)
    assert grand == pytest.approx(2 / 3)


def test_intra_cluster_correlation_oracle(rng):
    rows = rng.standard_normal((20, 15))
    labels = np.repeat([1, 2, 3, 4], 5)
    per, _ = intra_cluster_correlation(parc_from_rows(rows, labels), rows)
    for c in range(1, 5):
        rep = rows[labels == c].mean(0)
        want = np.mean([np.corrcoef(r, rep)[0, 1] for r in rows[labels == c]])
        assert per[c - 1] == pytest.approx(want, abs=1e-12)


def test_intra_is_one_on_noiseless_grid():
    vol, _, _ = generate_grid(GridSpec(phases=SEPARABLE_PHASES))
    x = vectorize(vol, MaskVolume.full(vol.geometry))
    per, _ = intra_cluster_correlation(multistage_cluster(x, MultistageConfig(ns=3)), x)
    np.testing.assert_allclose(per, 1.0, atol=1e-12)


def test_tissue_overlap_examples():
    g = VolumeGeometry(4, 1, 1)
    lab = LabelVolume(g, np.array([1, 2, 2, 3]).reshape(4, 1, 1))
    gm = MaskVolume(g, np.array([1, 1, 0, 0], bool).reshape(4, 1, 1))
    wm = MaskVolume(g, np.array([0, 0, 1, 0], bool).reshape(4, 1, 1))
    rows = tissue_overlap(lab, gm, wm)
    assert [(r.label, r.gm_frac, r.wm_frac) for r in rows] == [(1, 1.0, 0.0), (2, 0.5, 0.5), (3, 0.0, 0.0)]


def test_random_parcellation_properties():
    g = VolumeGeometry(16, 16, 16)
    assert np.all(random_parcellation(VolumeGeometry(3, 3, 3), 1, make_rng(0)).labels == 1)
    lab = random_parcellation(g, 8, make_rng(1)).labels
    counts = np.bincount(lab.ravel(), minlength=9)[1:]
    sd = math.sqrt(4096 * (1 / 8) * (7 / 8))
    assert np.all(np.abs(counts - 512) <= 5 * sd)
    assert not np.array_equal(lab, random_parcellation(g, 8, make_rng(2)).labels)
    with pytest.raises(InvalidInput):
        random_parcellation(VolumeGeometry(2, 1, 1), 3, make_rng(0))


def test_random_msi_respects_counting_lower_bound():
    # For two k-cluster partitions of the same n voxels, sum_ij n_ij^2/(a_i b_j)
    # is at least 1 (Cauchy-Schwarz), so the largest SI is at least 1/k.
    vals = random_baseline(VolumeGeometry(8, 8, 8), 8, 10, make_rng(3))
    assert np.all(vals >= 1 / 8)
