import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from segblur.errors import InvalidParameterError
from segblur.metrics import MetricReport, compare, gaussian_window, psnr, ssim


def reference_ssim(a, b):
    return structural_similarity(
        a,
        b,
        gaussian_weights=True,
        sigma=1.5,
        use_sample_covariance=False,
        data_range=1.0,
        channel_axis=-1 if a.ndim == 3 else None,
    )


def fixture_pair(shape=(32, 32)):
    rng = np.random.default_rng(12)
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]] / shape[0]
    a = 0.5 + 0.3 * np.sin(6 * xx) * np.cos(4 * yy)
    if len(shape) == 3:
        a = a[..., None] + 0.1 * np.arange(shape[2]) / shape[2]
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    return a, b


def test_psnr_identical_is_infinite():
    a = np.random.default_rng(0).random((8, 8))
    assert psnr(a, a) == math.inf


def test_psnr_closed_form():
    a = np.full((16, 16), 0.3)
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_symmetric():
    rng = np.random.default_rng(0)
    a, b = rng.random((10, 10)), rng.random((10, 10))
    assert psnr(a, b) == psnr(b, a)


def test_psnr_decreases_with_noise():
    img = np.random.default_rng(0).random((64, 64)) * 0.5 + 0.25
    scores = []
    for std in (0.01, 0.02, 0.05):
        scores.append(np.mean([psnr(img, img + np.random.default_rng(s).normal(0, std, img.shape)) for s in range(3)]))
    assert scores[0] > scores[1] > scores[2]


def test_shape_mismatch():
    with pytest.raises(InvalidParameterError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(InvalidParameterError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))


def test_ssim_too_small():
    with pytest.raises(InvalidParameterError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))


def test_ssim_identical():
    a = np.random.default_rng(0).random((16, 16, 3))
    assert ssim(a, a) == 1.0


def test_ssim_symmetric():
    a, b = fixture_pair()
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-9


@pytest.mark.parametrize("shape", [(32, 32), (32, 32, 3), (40, 29)])
def test_ssim_matches_reference(shape):
    a, b = fixture_pair(shape)
    assert abs(ssim(a, b) - reference_ssim(a, b)) < 1e-4


def test_ssim_bounded():
    rng = np.random.default_rng(3)
    for _ in range(5):
        a, b = rng.random((20, 20)), rng.random((20, 20))
        assert ssim(a, b) <= 1


def test_ssim_luminance_shift_recorded():
    # no invariance claimed; the score is just computed
    a, b = fixture_pair()
    shifted = ssim(a + 0.1, b + 0.1)
    assert -1 <= shifted <= 1


def test_gaussian_window():
    g = gaussian_window()
    assert len(g) == 11
    assert g.sum() == pytest.approx(1.0)
    assert g.argmax() == 5


def test_report():
    a, b = fixture_pair()
    rep = compare(a, b)
    assert rep.to_dict()["color_handling"] == "per-channel mean"
    assert MetricReport(math.inf, 1.0).to_dict()["psnr"] == "inf"
