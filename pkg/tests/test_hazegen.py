import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moemamba.errors import ParameterError, ShapeError
from moemamba.hazegen import (HazeScene, IntensityBin, SynthConfig, bin_by_intensity, bin_thresholds,
                              default_betas, depth_map, intensity_series, make_dataset,
                              mean_ramp_transmission, read_manifest, resolve_manifest, scene_split,
                              synthesize, synthetic_scene, transmission)
from moemamba.imageio import read_image, write_depth, write_image
from moemamba.metrics import psnr


def scene(seed=0, size=16):
    rng = np.random.default_rng(seed)
    return synthetic_scene(rng, size, size), depth_map("radial", size, size)


def test_beta_zero_and_zero_depth_are_identity():
    J, D = scene()
    assert np.array_equal(synthesize(HazeScene(J, D, 0.0, 0.8)), J)
    assert np.array_equal(synthesize(HazeScene(J, np.zeros_like(D), 2.0, 0.8)), J)


def test_hand_case():
    J = np.full((3, 4, 4), 0.5)
    out = synthesize(HazeScene(J, np.ones((4, 4)), math.log(2), 1.0))
    np.testing.assert_allclose(out, 0.75, rtol=0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 5), st.floats(0, 1))
def test_convexity(seed, beta, a):
    J, D = scene(seed, 8)
    I = synthesize(HazeScene(J, D, beta, a))
    assert np.all(I >= np.minimum(J, a) - 1e-12) and np.all(I <= np.maximum(J, a) + 1e-12)


def test_per_channel_light():
    J, D = scene()
    I = synthesize(HazeScene(J, D, 1.0, [0.9, 0.8, 0.7]))
    t = transmission(D, 1.0)
    np.testing.assert_allclose(I[2], J[2] * t + 0.7 * (1 - t), atol=1e-15)


@pytest.mark.parametrize("kwargs,err", [
    ({"beta": -0.1}, ParameterError),
    ({"D": -np.ones((16, 16))}, ParameterError),
    ({"A": 1.2}, ParameterError),
    ({"D": np.ones((8, 16))}, ShapeError),
])
def test_scene_validation(kwargs, err):
    J, D = scene()
    args = {"J": J, "D": D, "beta": 1.0, "A": 0.9} | kwargs
    with pytest.raises(err):
        HazeScene(**args)


def test_transmission_strictly_decreasing_in_beta():
    D = depth_map("linear-ramp", 8, 8, d_min=0.1)
    ts = [transmission(D, b) for b in np.linspace(0, 3, 7)]
    assert all(np.all(b < a) for a, b in zip(ts, ts[1:]))


def test_depth_maps():
    ramp = depth_map("linear-ramp", 5, 3, d_min=0.0, d_max=2.0)
    assert np.all(ramp[0] == 0) and np.all(ramp[-1] == 2.0)
    assert np.all(np.diff(ramp[:, 0]) > 0)
    rad = depth_map("radial", 5, 5, d_min=0.5, d_max=3.0)
    assert rad[2, 2] == 0.5 and rad[0, 0] == pytest.approx(3.0)
    with pytest.raises(ParameterError):
        depth_map("linear-ramp", 4, 4, d_min=2.0, d_max=2.0)
    with pytest.raises(ParameterError):
        depth_map("cubist", 4, 4)
    with pytest.raises(ParameterError):
        depth_map("from-file", 4, 4)


def test_depth_file_roundtrip(tmp_path):
    d = depth_map("radial", 12, 10, 0.5, 3.0)
    write_depth(tmp_path / "d.png", d, 0.5, 3.0)
    back = depth_map("from-file", 12, 10, 0.5, 3.0, path=tmp_path / "d.png")
    assert np.max(np.abs(back - d)) <= 2.5 / 65535 / 2 + 1e-12
    with pytest.raises(ShapeError):
        depth_map("from-file", 10, 10, path=tmp_path / "d.png")


def test_default_betas_span():
    betas = default_betas()
    assert betas.size == 8 and np.all(np.diff(betas) > 0)
    assert mean_ramp_transmission(betas[0], 0.5, 3.0) == pytest.approx(0.95, abs=1e-9)
    assert mean_ramp_transmission(betas[-1], 0.5, 3.0) == pytest.approx(0.15, abs=1e-9)
    np.testing.assert_allclose(np.diff(np.log(betas)), np.log(betas[1] / betas[0]), rtol=1e-12)
    D = depth_map("linear-ramp", 2001, 1)
    assert transmission(D, betas[3]).mean() == pytest.approx(mean_ramp_transmission(betas[3], 0.5, 3.0), abs=1e-5)


def test_intensity_series():
    J, D = scene(3)
    betas = np.concatenate([[0.0], default_betas()[1:]])
    series = intensity_series(J, D, 0.9, betas)
    assert len(series) == 8 and np.array_equal(series[0], J)
    trans = [transmission(D, b).mean() for b in betas]
    assert all(b <= a for a, b in zip(trans, trans[1:]))
    ps = [psnr(s, J) for s in series[1:]]
    assert all(b < a for a, b in zip(ps, ps[1:]))
    with pytest.raises(ParameterError):
        intensity_series(J, D, 0.9, [0.1, 0.3, 0.2])


def test_binning_uniform_5040():
    scores = np.random.default_rng(0).uniform(size=5040)
    bins = bin_by_intensity(scores, (0.183, 0.817))
    counts = [bins.count(b) for b in IntensityBin]
    assert all(abs(c - e) <= 1 for c, e in zip(counts, (922, 3196, 922)))
    lo, hi = bin_thresholds(scores)
    light = scores[[b is IntensityBin.LIGHT for b in bins]]
    dense = scores[[b is IntensityBin.DENSE for b in bins]]
    assert light.max() == lo and dense.min() > hi


def test_binning_ties_by_index():
    bins = bin_by_intensity([0.5] * 10, (0.2, 0.8))
    assert [b.value for b in bins] == ["light"] * 2 + ["medium"] * 6 + ["dense"] * 2


@pytest.mark.parametrize("q", [(0.5, 0.5), (0.0, 0.5), (0.6, 0.4), (0.2, 1.0)])
def test_binning_rejects_bad_quantiles(q):
    with pytest.raises(ParameterError):
        bin_by_intensity([0.1, 0.2], q)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=300), st.floats(0.05, 0.45), st.floats(0.55, 0.95))
def test_binning_properties(scores, q1, q2):
    bins = bin_by_intensity(scores, (q1, q2))
    n = len(scores)
    counts = [bins.count(b) for b in IntensityBin]
    assert sum(counts) == n
    assert abs(counts[0] - q1 * n) <= 1 and abs(counts[0] + counts[1] - q2 * n) <= 1
    rank = {IntensityBin.LIGHT: 0, IntensityBin.MEDIUM: 1, IntensityBin.DENSE: 2}
    for i in range(n):
        for j in range(n):
            if scores[i] < scores[j]:
                assert rank[bins[i]] <= rank[bins[j]]


def test_scene_split_deterministic_and_disjoint():
    ids = [f"s{i}" for i in range(10)]
    a, b = scene_split(ids, 0.3, 4), scene_split(list(reversed(ids)), 0.3, 4)
    assert a == b and sum(v == "test" for v in a.values()) == 3


def test_make_dataset_counts_and_split(tmp_path):
    cfg = SynthConfig(scenes=10, size=16, seed=2, dc_window=5)
    manifest = make_dataset(tmp_path / "d", cfg)
    records, errors = read_manifest(tmp_path / "d" / "manifest")
    assert manifest == resolve_manifest(tmp_path / "d") and not errors
    assert len(records) == 80
    train = {r.scene_id for r in records if r.split == "train"}
    test = {r.scene_id for r in records if r.split == "test"}
    assert train and test and not train & test
    assert {r.bin for r in records} == {"light", "medium", "dense"}
    hazy = read_image(tmp_path / "d" / records[0].hazy)
    assert hazy.shape == (3, 16, 16)
    again = make_dataset(tmp_path / "e", cfg)
    assert manifest.read_text() == again.read_text()


def test_make_dataset_from_directory_records_errors(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    rng = np.random.default_rng(0)
    write_image(src / "a.png", synthetic_scene(rng, 12, 12))
    write_image(src / "b.ppm", synthetic_scene(rng, 12, 12))
    (src / "broken.png").write_bytes(b"garbage")
    (src / "notes.txt").write_text("ignored")
    records, errors = read_manifest(make_dataset(tmp_path / "out", SynthConfig(dc_window=3), clean_dir=src))
    assert len(records) == 16 and len(errors) == 1 and "broken.png" in errors[0]
