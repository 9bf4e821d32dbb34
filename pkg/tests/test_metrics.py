import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tstdl import metrics
from tstdl.errors import DimensionError, ParameterError


def windowed_ssim_oracle(a, b):
    """Direct per-window evaluation with an explicitly built 2-D Gaussian."""
    x = np.arange(11) - 5.0
    g1 = np.exp(-x ** 2 / (2 * 1.5 ** 2))
    g2 = np.outer(g1, g1)
    g2 /= g2.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = np.sum(g2 * pa), np.sum(g2 * pb)
            va = np.sum(g2 * (pa - ma) ** 2)
            vb = np.sum(g2 * (pb - mb) ** 2)
            cov = np.sum(g2 * (pa - ma) * (pb - mb))
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_rmse_basics():
    x = np.random.default_rng(0).random((8, 8))
    assert metrics.rmse(x, x) == 0
    assert metrics.rmse(np.zeros((4, 4)), np.ones((4, 4))) == 1
    y = np.random.default_rng(1).random((8, 8))
    assert metrics.rmse(x, y) == pytest.approx(math.sqrt(sum((x - y).ravel() ** 2) / 64), abs=1e-12)
    with pytest.raises(DimensionError):
        metrics.rmse(np.zeros(3), np.zeros(4))


def test_ssim_identity_symmetry_oracle():
    rng = np.random.default_rng(2)
    a = rng.random((16, 16))
    b = np.clip(a + 0.1 * rng.standard_normal((16, 16)), 0, 1)
    assert metrics.ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert metrics.ssim(a, b) == pytest.approx(metrics.ssim(b, a), abs=1e-12)
    assert metrics.ssim(a, b) == pytest.approx(windowed_ssim_oracle(a, b), abs=1e-9)
    assert -1 <= metrics.ssim(a, 1 - a) <= 1


def test_ssim_rejects_small_images():
    with pytest.raises(ParameterError):
        metrics.ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_error_image():
    rng = np.random.default_rng(3)
    a, b = rng.random((6, 6)), rng.random((6, 6))
    np.testing.assert_array_equal(metrics.error_image(a, a), np.zeros((6, 6)))
    e = metrics.error_image(a, b)
    assert e.max() == np.abs(a - b).max()
    assert metrics.rmse(a, b) ** 2 == pytest.approx(np.mean(e ** 2), abs=1e-12)


def test_aggregate():
    one = metrics.aggregate([metrics.ImageMetrics("0", 0.2, 0.9)])
    assert one.rmse_std == 0
    two = metrics.aggregate([metrics.ImageMetrics("0", 0.1, 0.5), metrics.ImageMetrics("1", 0.3, 0.7)])
    assert two.rmse_mean == pytest.approx(0.2, abs=1e-15)
    assert two.rmse_std == pytest.approx(0.1, abs=1e-15)
    with pytest.raises(ParameterError):
        metrics.aggregate([])
    vals = np.random.default_rng(4).random(100)
    rep = metrics.aggregate([metrics.ImageMetrics(str(i), v, v) for i, v in enumerate(vals)])
    mu = sum(vals) / 100
    assert rep.rmse_mean == pytest.approx(mu, abs=1e-12)
    assert rep.rmse_std == pytest.approx(math.sqrt(sum((vals - mu) ** 2) / 100), abs=1e-12)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    truths = rng.random((3, 12, 12))
    preds = truths + 0.05 * rng.standard_normal(truths.shape)
    rep = metrics.evaluate(preds, truths, experiment="exp", model="tst")
    path = tmp_path / "m.csv"
    text = metrics.write_csv([rep], path)
    lines = text.splitlines()
    assert lines[0] == "experiment,model,image_id,rmse,ssim"
    assert len(lines) == 1 + 3 + 2
    back = metrics.read_csv(path)[0]
    assert back.rmse_mean == rep.rmse_mean
    assert float(lines[-2].split(",")[3]) == back.rmse_mean


def test_evaluate_clamps_predictions():
    truth = np.ones((1, 12, 12))
    rep = metrics.evaluate(truth * 1.5, truth)
    assert rep.per_image[0].rmse == 0
    assert rep.clamped


unit_images = arrays(np.float64, (12, 12), elements=st.floats(0, 1))


@settings(max_examples=30, deadline=None)
@given(unit_images, unit_images, unit_images)
def test_rmse_triangle(a, b, c):
    assert metrics.rmse(a, c) <= metrics.rmse(a, b) + metrics.rmse(b, c) + 1e-12


@settings(max_examples=30, deadline=None)
@given(unit_images, unit_images)
def test_ssim_properties(a, b):
    assert metrics.ssim(a, a) == pytest.approx(1.0, abs=1e-9)
    assert metrics.ssim(a, b) == pytest.approx(metrics.ssim(b, a), abs=1e-12)
