import numpy as np
import pytest

from moemamba import model as model_mod
from moemamba import numcore as nc
from moemamba.checkpoint import load_model, save_model
from moemamba.errors import CheckpointError, ConfigurationError, ShapeError
from moemamba.gradsuite import tiny_model_suite
from moemamba.model import ModelConfig, build, count_parameters, forward, forward_features, run_padded
from moemamba.moe import mm_block_forward
from moemamba.numcore import Tensor
from moemamba.prior import DegradationPrior


def tiny64(seed=0):
    return build(ModelConfig.tiny(), seed, np.float64)


def two_level():
    return ModelConfig(levels=2, blocks=[1, 1], experts=[3, 1], topk=[2, 1], base_channels=4, d_state=2)


P2 = DegradationPrior(np.array([0.7, 0.3]))


def image(shape=(1, 3, 8, 8), seed=0):
    return np.random.default_rng(seed).uniform(0, 1, shape)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ModelConfig(levels=1, blocks=[1], experts=[2], topk=[3]).validate()
    with pytest.raises(ConfigurationError):
        ModelConfig(levels=2, blocks=[1], experts=[2], topk=[1]).validate()
    with pytest.raises(ConfigurationError):
        ModelConfig(levels=2, blocks=[1, 1], experts=[2, 3], topk=[1, 1]).validate()
    with pytest.raises(ConfigurationError):
        build(ModelConfig(levels=1, blocks=[1], experts=[2], topk=[0]))


def test_config_roundtrip():
    cfg = ModelConfig.paper()
    assert cfg.blocks == [4, 6, 6, 8] and cfg.experts == [14, 1, 1, 14] and cfg.topk == [7, 1, 1, 7]
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.size_multiple == 8 and cfg.prior_levels == 14


def test_single_conv_count():
    w, b = model_mod._conv(np.random.default_rng(0), 4, 3, np.float32)
    assert w.size + b.size == 112


def test_tiny_count_hand_tally():
    c, n, d = 4, 2, 4
    ssm_params = c * d + c + d * c + d * c + c * c + c  # A_log, D, B, C, delta proj, delta bias
    ssb = c * 9 + 4 * ssm_params + 2 * c
    moe = 3 * (c * c + c) + n * ssb
    attn = (1 * c + 1) + (c * 1 + c)
    mm = 2 * c + moe + 2 * c + (c * c * 9 + c) + attn
    total = (3 * c * 9 + c) + mm + 1 + (c * 3 * 9 + 3)
    assert count_parameters(tiny64()) == total == 1125


def test_count_monotone_in_width():
    a = count_parameters(build(ModelConfig.tiny()))
    b = count_parameters(build(ModelConfig(levels=1, blocks=[1], experts=[2], topk=[1], base_channels=8, d_state=4)))
    assert b > a


def test_build_deterministic():
    a, b = tiny64(3), tiny64(3)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)
    c = tiny64(4)
    assert not np.array_equal(a.shallow_w.data, c.shallow_w.data)
    assert a.delta.data.tolist() == [1.0]


def test_forward_shape_and_determinism():
    net = build(ModelConfig.tiny(), 0)
    x = image((1, 3, 64, 64)).astype(np.float32)
    with nc.no_record():
        a = forward(x, P2, net).data
        b = forward(x, P2, net).data
    assert a.shape == x.shape and np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1


def test_forward_matches_stage_replay():
    net = tiny64()
    x = image()
    got = forward(x, P2, net).data
    f_s = nc.conv2d(Tensor(x), net.shallow_w, net.shallow_b, padding=1)
    mm = mm_block_forward(f_s, P2, net.bottleneck[0])
    f_a = mm + net.delta * f_s + f_s
    out = np.clip(nc.conv2d(f_a, net.recon_w, net.recon_b, padding=1).data, 0, 1)
    np.testing.assert_array_equal(got, out)


def test_encoder_decoder_spatial_symmetry():
    cfg = ModelConfig(levels=3, blocks=[1, 0, 1], experts=[1, 1, 1], topk=[1, 1, 1], base_channels=2, d_state=2)
    net = build(cfg, 0, np.float64)
    shapes = []
    orig = model_mod.mm_block_forward

    def spy(x, p, blk):
        shapes.append(x.shape)
        return orig(x, p, blk)

    model_mod.mm_block_forward = spy
    try:
        out = forward(image((1, 3, 16, 12)), None, net)
    finally:
        model_mod.mm_block_forward = orig
    assert shapes == [(1, 2, 16, 12), (1, 8, 4, 3), (1, 2, 16, 12)]
    assert out.shape == (1, 3, 16, 12)


def test_zero_mm_map_gives_delta_residual(monkeypatch):
    net = tiny64()
    net.delta.data[:] = 0.37
    monkeypatch.setattr(model_mod, "mm_stack", lambda n, f, p: f * 0.0)
    feats = forward_features(net, image(), P2)
    np.testing.assert_allclose(feats["F_hat_s"].data, 0.37 * feats["F_s"].data, rtol=0, atol=1e-10)
    np.testing.assert_allclose(feats["F_a"].data, 1.37 * feats["F_s"].data, rtol=0, atol=1e-10)


def test_routing_reaches_output():
    net = tiny64()
    x = image()
    a = forward(x, DegradationPrior(np.array([0.8, 0.2])), net).data
    b = forward(x, DegradationPrior(np.array([0.2, 0.8])), net).data
    assert np.max(np.abs(a - b)) > 1e-8


def test_prior_requirements():
    net = tiny64()
    with pytest.raises(ConfigurationError):
        forward(image(), None, net)
    unrouted = build(ModelConfig(levels=1, blocks=[1], experts=[1], topk=[1], base_channels=2, d_state=2))
    assert forward(image(), None, unrouted).shape == (1, 3, 8, 8)


def test_indivisible_dims_and_padding():
    net = build(two_level(), 0, np.float64)
    p3 = DegradationPrior(np.array([0.5, 0.3, 0.2]))
    with pytest.raises(ShapeError, match="pad"):
        forward(image((1, 3, 7, 8)), p3, net)
    with pytest.raises(ShapeError):
        forward(image((1, 4, 8, 8)), p3, net)
    out = run_padded(net, image((1, 3, 7, 9))[0], p3)
    assert out.shape == (3, 7, 9)
    full = run_padded(net, image((1, 3, 8, 10)), p3)
    np.testing.assert_array_equal(full, forward(image((1, 3, 8, 10)), p3, net).data)


def test_tiny_model_gradient_check():
    assert tiny_model_suite() < 1e-3


def test_checkpoint_roundtrip(tmp_path):
    net = build(two_level(), 5)
    path = tmp_path / "net.ckpt"
    save_model(path, net, extra={"note": "x"})
    loaded, header, _ = load_model(path, expect=two_level())
    assert header["extra"]["note"] == "x" and header["rng_convention"]
    p3 = DegradationPrior(np.array([0.5, 0.3, 0.2]))
    x = image((1, 3, 8, 8)).astype(np.float32)
    assert np.array_equal(forward(x, p3, net).data, forward(x, p3, loaded).data)
    with pytest.raises(CheckpointError):
        load_model(path, expect=ModelConfig.tiny())
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_model(bad)


def test_checkpoint_corruption(tmp_path):
    net = build(ModelConfig.tiny(), 0)
    path = tmp_path / "t.ckpt"
    save_model(path, net)
    raw = path.read_bytes()
    for cut in (len(raw) - 4, 20, 30):
        (tmp_path / "cut.ckpt").write_bytes(raw[:cut])
        with pytest.raises(CheckpointError):
            load_model(tmp_path / "cut.ckpt")
    assert not list(tmp_path.glob("*.tmp"))
