import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from skimage.metrics import structural_similarity

from moemamba import numcore as nc
from moemamba.errors import ParameterError, ShapeError
from moemamba.metrics import MetricReport, charbonnier, gaussian_window, psnr, ssim
from moemamba.numcore import Tensor

images = arrays(np.float64, (3, 12, 12), elements=st.floats(0, 1))


def reference_ssim(a, b):
    return structural_similarity(a.mean(axis=0), b.mean(axis=0), data_range=1.0, gaussian_weights=True,
                                 sigma=1.5, use_sample_covariance=False)


@settings(max_examples=30, deadline=None)
@given(images)
def test_charbonnier_identity_is_eps(x):
    assert charbonnier(x, x).data.item() == 1e-3
    assert charbonnier(x, x, eps=0.25).data.item() == 0.25


def test_charbonnier_scalar_and_l1_limit():
    v = charbonnier(np.array([0.003]), np.array([0.0])).data.item()
    assert v == pytest.approx(np.sqrt(9e-6 + 1e-6), abs=1e-15)
    a = np.zeros((2, 5))
    b = np.full((2, 5), 0.5)
    assert charbonnier(a, b, eps=1e-8).data.item() == pytest.approx(0.5, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(images, images)
def test_charbonnier_bounds(a, b):
    v = charbonnier(a, b).data.item()
    assert v >= 1e-3
    naive = np.mean(np.sqrt((a - b) ** 2 + 1e-6))
    assert v == pytest.approx(naive, rel=1e-12, abs=1e-15)
    assert abs(charbonnier(a, b, eps=1e-8).data.item() - np.abs(a - b).mean()) < 1e-6


def test_charbonnier_errors_and_gradient():
    with pytest.raises(ShapeError):
        charbonnier(np.zeros(3), np.zeros(4))
    with pytest.raises(ParameterError):
        charbonnier(np.zeros(3), np.zeros(3), eps=0)
    rng = np.random.default_rng(0)
    clean = rng.uniform(size=(2, 3, 4))
    out = Tensor(rng.uniform(size=(2, 3, 4)), requires_grad=True)
    out.data[0, 0, 0] = clean[0, 0, 0]  # exercise d = 0
    assert nc.grad_check(lambda: charbonnier(clean, out), [out], 1e-6) < 1e-6


def test_psnr_anchors():
    x = np.random.default_rng(1).uniform(size=(3, 8, 8))
    assert psnr(x, x) == 100.0
    assert psnr(np.zeros((3, 4, 4)), np.ones((3, 4, 4))) == 0.0
    assert psnr(np.zeros(100), np.full(100, 0.1)) == pytest.approx(20.0, abs=1e-12)
    assert psnr(np.zeros(4), np.full(4, 2.0), peak=2.0) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ShapeError):
        psnr(np.zeros(3), np.zeros(4))


@settings(max_examples=20, deadline=None)
@given(images, images)
def test_psnr_symmetric(a, b):
    assert psnr(a, b) == psnr(b, a)


def test_gaussian_window():
    w = gaussian_window(11, 1.5)
    assert w.sum() == pytest.approx(1.0, abs=1e-15) and np.array_equal(w, w[::-1])
    assert w.argmax() == 5


@settings(max_examples=20, deadline=None)
@given(images, images)
def test_ssim_identity_and_symmetry(a, b):
    assert abs(ssim(a, a) - 1.0) <= 1e-9
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-9


def test_ssim_constants_far_apart():
    assert ssim(np.zeros((3, 16, 16)), np.ones((3, 16, 16))) < 0.1


def test_ssim_matches_reference_on_random_pairs():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = rng.uniform(size=(3, 24, 20))
        b = np.clip(a + rng.normal(scale=0.2, size=a.shape), 0, 1)
        assert abs(ssim(a, b) - reference_ssim(a, b)) <= 1e-6


def test_ssim_per_channel_and_errors():
    rng = np.random.default_rng(3)
    a, b = rng.uniform(size=(3, 12, 12)), rng.uniform(size=(3, 12, 12))
    expect = np.mean([ssim(a[c], b[c]) for c in range(3)])
    assert ssim(a, b, luma=False) == pytest.approx(expect, abs=1e-15)
    with pytest.raises(ParameterError):
        ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))
    with pytest.raises(ShapeError):
        ssim(np.zeros((2, 3, 12, 12)), np.zeros((2, 3, 12, 12)))


def test_metric_report_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    rep, base = MetricReport(), MetricReport()
    for i in range(3):
        clean = rng.uniform(size=(3, 12, 12))
        rep.add(f"im{i}", clean, clean)
        base.add(f"im{i}", rng.uniform(size=(3, 12, 12)), clean)
    m = rep.means()
    assert m["psnr"] == 100.0 and m["ssim"] == pytest.approx(1.0, abs=1e-9)
    assert abs(base.means()["psnr"] - np.mean(base.psnr)) <= 1e-9
    path = tmp_path / "r.txt"
    rep.write(path, baseline=base)
    text = path.read_text()
    assert "#mean" in text and "#hazy_mean" in text
    back = MetricReport.read(path)
    assert back.image_ids == rep.image_ids and len(back) == 3
