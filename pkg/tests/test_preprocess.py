import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mskmeans.core import TimeSeriesMatrix
from mskmeans.errors import EmptyMask, InvalidInput
from mskmeans.preprocess import (
    PreprocessConfig,
    detrend_and_regress,
    devectorize,
    gaussian_kernel_1d,
    gaussian_smooth,
    mask_from_threshold,
    preprocess,
    vectorize,
)
from mskmeans.volio import MaskVolume, Volume4D, VolumeGeometry


def vol(data, voxel=(1.0, 1.0, 1.0)):
    data = np.asarray(data, dtype=np.float64)
    return Volume4D(VolumeGeometry(*data.shape[:3], *voxel, 1.0), data)


def brute_smooth(data, flags, fwhm, voxel):
    """Direct 3-D normalized convolution, written without separability."""
    sig = [fwhm / (2 * math.sqrt(2 * math.log(2)) * v) for v in voxel]
    rad = [int(math.ceil(3 * s)) for s in sig]
    out = data.copy()
    nx, ny, nz = flags.shape
    for x, y, z in zip(*np.nonzero(flags)):
        num = np.zeros(data.shape[3])
        den = 0.0
        for i in range(-rad[0], rad[0] + 1):
            for j in range(-rad[1], rad[1] + 1):
                for k in range(-rad[2], rad[2] + 1):
                    xx, yy, zz = x + i, y + j, z + k
                    if not (0 <= xx < nx and 0 <= yy < ny and 0 <= zz < nz) or not flags[xx, yy, zz]:
                        continue
                    w = 1.0
                    for off, s in zip((i, j, k), sig):
                        w *= math.exp(-0.5 * (off / s) ** 2) if s > 0 else float(off == 0)
                    num += w * data[xx, yy, zz]
                    den += w
        out[x, y, z] = num / den
    return out


def test_mask_threshold_examples():
    v = vol(np.array([1.0, 3.0]).reshape(2, 1, 1, 1) * np.ones((1, 1, 1, 4)))
    assert mask_from_threshold(v, 2.0).count == 1
    assert mask_from_threshold(v, -10).count == 2
    with pytest.raises(EmptyMask):
        mask_from_threshold(v, 10)


def test_vectorize_order_and_inverse(rng):
    v = vol(rng.standard_normal((3, 2, 2, 5)))
    flags = rng.random((3, 2, 2)) > 0.3
    flags[0, 0, 0] = True
    m = MaskVolume(v.geometry, flags)
    x = vectorize(v, m)
    # x fastest, then y, then z
    keys = x.index_map[:, 0] + 3 * x.index_map[:, 1] + 6 * x.index_map[:, 2]
    assert np.all(np.diff(keys) > 0)
    back = devectorize(x)
    np.testing.assert_array_equal(back.data[flags], v.data[flags])
    np.testing.assert_array_equal(back.data[~flags], 0.0)
    two = vectorize(vol(np.arange(6.0).reshape(2, 1, 1, 3)), MaskVolume.full(VolumeGeometry(2, 1, 1)))
    np.testing.assert_array_equal(two.data, [[0, 1, 2], [3, 4, 5]])


def test_vectorize_errors():
    v = vol(np.zeros((2, 2, 1, 3)))
    with pytest.raises(InvalidInput):
        vectorize(v, MaskVolume.full(VolumeGeometry(3, 2, 1)))
    with pytest.raises(EmptyMask):
        vectorize(v, MaskVolume(v.geometry, np.zeros((2, 2, 1), bool)))


def test_kernel_normalized_and_truncated():
    k = gaussian_kernel_1d(1.2)
    assert k.size == 2 * 4 + 1
    assert k.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(k, k[::-1])


@pytest.mark.parametrize("fwhm,voxel", [(2.0, (1.0, 1.0, 1.0)), (5.0, (2.0, 3.0, 4.0)), (1.0, (1.0, 1.0, 3.0))])
def test_smoothing_matches_brute_force(rng, fwhm, voxel):
    data = rng.standard_normal((6, 5, 4, 2))
    flags = rng.random((6, 5, 4)) > 0.25
    v = vol(data, voxel)
    got = gaussian_smooth(v, MaskVolume(v.geometry, flags), fwhm).data
    np.testing.assert_allclose(got, brute_smooth(data, flags, fwhm, voxel), atol=1e-12)


def test_smoothing_fwhm_zero_is_identity_and_negative_rejected(rng):
    v = vol(rng.standard_normal((3, 3, 3, 2)))
    m = MaskVolume.full(v.geometry)
    assert gaussian_smooth(v, m, 0.0).data.tobytes() == v.data.tobytes()
    with pytest.raises(InvalidInput):
        gaussian_smooth(v, m, -1.0)


def test_constant_frame_preserved_and_outside_untouched(rng):
    data = np.full((7, 7, 3, 1), 4.2)
    flags = rng.random((7, 7, 3)) > 0.4
    data[~flags] = rng.standard_normal(int((~flags).sum()))[:, None]
    v = vol(data)
    out = gaussian_smooth(v, MaskVolume(v.geometry, flags), 3.0).data
    np.testing.assert_allclose(out[flags], 4.2, atol=1e-6)
    np.testing.assert_array_equal(out[~flags], data[~flags])


def test_impulse_spreads_mass_one():
    # radius 6: every voxel the impulse reaches still sees a full in-bounds kernel
    data = np.zeros((25, 25, 25, 1))
    data[12, 12, 12] = 1.0
    v = vol(data)
    out = gaussian_smooth(v, MaskVolume.full(v.geometry), 4.0).data
    assert out.sum() == pytest.approx(1.0, abs=1e-6)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32 - 1))
def test_smoothing_is_linear(a, b, seed):
    r = np.random.default_rng(seed)
    g = VolumeGeometry(5, 4, 3, 1.0, 1.5, 2.0, 1.0)
    m = MaskVolume(g, r.random(g.shape) > 0.3)
    v, w = r.standard_normal((2, 5, 4, 3, 2))
    s = lambda d: gaussian_smooth(Volume4D(g, d), m, 3.0).data
    lhs = s(a * v + b * w)
    rhs = a * s(v) + b * s(w)
    np.testing.assert_allclose(lhs, rhs, atol=1e-6 * (np.abs(rhs).max() + 1))


def matrix(rows):
    return TimeSeriesMatrix.from_array(np.asarray(rows, dtype=np.float64))


def test_regression_examples(rng):
    g = rng.standard_normal(40)
    out = detrend_and_regress(matrix(np.tile(g, (5, 1))), PreprocessConfig())
    assert np.all(np.linalg.norm(out.data, axis=1) <= 1e-8 * np.linalg.norm(g))
    x = rng.standard_normal((6, 40)) + 5
    out = detrend_and_regress(matrix(x), PreprocessConfig(detrend_poly_order=0, regress_global=False))
    assert np.abs(out.data.mean(axis=1)).max() <= 1e-10
    ramp = 3 * np.arange(40.0) - 7
    out = detrend_and_regress(matrix(np.stack([ramp, ramp * 2])),
                              PreprocessConfig(detrend_poly_order=1, regress_global=False))
    assert np.abs(out.data).max() <= 1e-9 * np.abs(ramp).max()


@pytest.mark.parametrize("cfg", [PreprocessConfig(), PreprocessConfig(detrend_poly_order=3, regress_top_pcs=2),
                                 PreprocessConfig(detrend_poly_order=0, regress_global=False)])
def test_residual_orthogonal_to_regressors(rng, cfg):
    x = rng.standard_normal((15, 30)) + np.linspace(0, 3, 30)
    out = detrend_and_regress(matrix(x), cfg).data
    t = np.linspace(-1, 1, 30)
    regs = [np.polynomial.legendre.Legendre.basis(p)(t) for p in range(cfg.detrend_poly_order + 1)]
    if cfg.regress_global:
        regs.append(x.mean(axis=0))
    if cfg.regress_top_pcs:
        c = x - x.mean(axis=1, keepdims=True)
        regs.extend(np.linalg.svd(c, full_matrices=False)[2][: cfg.regress_top_pcs])
    for row in out:
        for r in regs:
            assert abs(row @ r) <= 1e-8 * max(np.linalg.norm(row) * np.linalg.norm(r), 1e-300) + 1e-12


def test_regression_is_idempotent(rng):
    x = matrix(rng.standard_normal((10, 25)))
    cfg = PreprocessConfig(detrend_poly_order=2)
    once = detrend_and_regress(x, cfg)
    with warnings.catch_warnings():
        # the global mean of the residual is zero, so that regressor drops out
        warnings.simplefilter("ignore")
        twice = detrend_and_regress(once, cfg)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-8 * np.abs(once.data).max())


def test_dependent_regressors_warn(rng):
    # a global signal that is an exact ramp duplicates the order-1 polynomial
    x = matrix(np.outer(np.arange(1.0, 5.0), np.arange(20.0)))
    with pytest.warns(UserWarning):
        detrend_and_regress(x, PreprocessConfig(detrend_poly_order=1))


def test_too_few_time_points():
    with pytest.raises(InvalidInput):
        detrend_and_regress(matrix(np.ones((3, 3))), PreprocessConfig(detrend_poly_order=1))


def test_preprocess_pipeline(rng):
    v = vol(rng.standard_normal((4, 4, 2, 30)) + 10)
    x, m = preprocess(v, PreprocessConfig(mask_threshold=0.0, smooth_fwhm_mm=2.0))
    assert m.count == 32 and x.n == 32 and x.t == 30
    assert np.abs(x.data.mean(axis=1)).max() < 1e-9
