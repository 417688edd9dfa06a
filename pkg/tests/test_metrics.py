import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from skimage.metrics import structural_similarity

from mmwsparse.metrics import ProjectionImage, evaluate, evaluate_volumes, max_projection, psnr, psnr_from_rmse, rmse, ssim


def test_single_voxel_projection():
    vol = np.zeros((5, 6, 3))
    vol[2, 3, 1] = 1
    expected = np.zeros((5, 6))
    expected[2, 3] = 1
    np.testing.assert_array_equal(max_projection(vol).values, expected)


def test_uniform_volume_projects_to_ones():
    np.testing.assert_array_equal(max_projection(np.full((4, 4, 3), 2 - 2j)).values, np.ones((4, 4)))


def test_minus_twenty_db_maps_to_zero():
    vol = np.zeros((1, 2, 2))
    vol[0, 0, 0], vol[0, 1, 1] = 1.0, 0.1
    np.testing.assert_allclose(max_projection(vol).values, [[1.0, 0.0]], atol=1e-12)


def test_zero_volume_projects_to_zero():
    assert not max_projection(np.zeros((3, 3, 2))).values.any()


def test_projection_rejects_out_of_range_values():
    with pytest.raises(ValueError):
        ProjectionImage(np.array([[1.5]]))


def test_rmse_examples():
    a = np.ones((4, 4))
    assert rmse(a, a) == 0
    assert rmse(a, np.zeros((4, 4))) == 255
    with pytest.raises(ValueError, match="dims"):
        rmse(a, np.ones((3, 4)))


def test_rmse_matches_double_loop(rng):
    a, b = rng.random((9, 7)), rng.random((9, 7))
    total = 0.0
    for i in range(9):
        for j in range(7):
            total += (255 * a[i, j] - 255 * b[i, j]) ** 2
    assert abs(rmse(a, b) - math.sqrt(total / 63)) < 1e-12


def test_psnr_examples():
    assert psnr_from_rmse(255) == 0
    assert psnr_from_rmse(25.5) == pytest.approx(20, abs=1e-12)
    assert math.isinf(psnr(np.ones((2, 2)), np.ones((2, 2))))


def test_psnr_scale_matches_reported_pair():
    assert psnr_from_rmse(22.83) == pytest.approx(20.96, abs=0.01)
    assert abs(psnr_from_rmse(22.83) - 21.04) < 0.1


def test_ssim_identity_and_size_check(rng):
    a = rng.random((16, 16))
    assert ssim(a, a) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="11x11"):
        ssim(np.ones((10, 20)), np.ones((10, 20)))


@pytest.mark.parametrize("seed", range(4))
def test_ssim_matches_reference_implementation(seed):
    rng = np.random.default_rng(seed)
    a = rng.random((32, 40))
    b = np.clip(a + 0.2 * rng.standard_normal(a.shape), 0, 1)
    ref = structural_similarity(a, b, win_size=11, gaussian_weights=True, sigma=1.5, use_sample_covariance=True, data_range=1.0)
    assert abs(ssim(a, b) - ref) < 1e-6


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_scores_are_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((12, 12)), rng.random((12, 12))
    s1, s2 = evaluate(a, b), evaluate(b, a)
    assert s1.rmse == s2.rmse and s1.psnr == s2.psnr
    assert s1.ssim == pytest.approx(s2.ssim, abs=1e-12)
    assert -1 <= s1.ssim <= 1


def test_evaluate_volumes_identical():
    vol = np.random.default_rng(0).random((16, 16, 4))
    scores = evaluate_volumes(vol, vol)
    assert scores.rmse == 0 and math.isinf(scores.psnr) and scores.ssim == pytest.approx(1.0)
