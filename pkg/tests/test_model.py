import numpy as np
import pytest

from trajrestore import numerics as nx
from trajrestore.model import (
    ModelConfig, forward, init_model, param_count, param_shapes, patchify, predict, training_loss, unpatchify,
)
from trajrestore.numerics import Tensor
from trajrestore.sequence import build_pseudo_clip

TINY = ModelConfig(patch_size=4, embed_dim=8, layers=1, heads=2, frame_count=2, image_size=8, condition_dropout_prob=0.0)


def randomized(config, seed, scale=0.3):
    # every parameter drawn at random (the real init zeros the output head, which hides upstream gradients)
    rng = np.random.default_rng(seed)
    return {k: Tensor(rng.normal(0, scale, v.shape), requires_grad=True) for k, v in init_model(config, 0, np.float64).items()}


def test_default_param_count():
    D, P, g, F, L, hid = 64, 48, 8, 9, 4, 256
    per_block = 4 * D + 4 * (D * D + D) + (D * hid + hid) + (hid * D + D)
    want = (P * D + D) + g * g * D + F * D + L * per_block + (D * P + P)
    assert want == 210864
    assert param_count(init_model(ModelConfig(), 0)) == want


def test_flow_adds_time_mlp_and_wider_embed():
    reg, flow = param_shapes(TINY), param_shapes(TINY.replace(mode="flow"))
    assert flow["patch_embed.w"][0] == 2 * reg["patch_embed.w"][0]
    assert {k for k in flow if k.startswith("time_mlp")} == {"time_mlp.w1", "time_mlp.b1", "time_mlp.w2", "time_mlp.b2"}


def test_init_deterministic():
    a, b = init_model(ModelConfig(), 5), init_model(ModelConfig(), 5)
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    c = init_model(ModelConfig(), 6)
    assert not np.array_equal(a["patch_embed.w"].data, c["patch_embed.w"].data)


def test_init_output():
    # zero head: plain mapping predicts zeros, the skip variant copies the anchor
    x = np.random.default_rng(0).random((2, 16, 16, 3))
    plain = ModelConfig(image_size=16)
    out = predict(init_model(plain, 0), plain, x)
    assert out.shape == (2, 9, 16, 16, 3) and np.all(out == 0)
    skip = plain.replace(anchor_skip=True)
    out = predict(init_model(skip, 0), skip, x)
    assert np.array_equal(out, np.broadcast_to(x[:, None].astype(np.float32), out.shape))


def test_invalid_config():
    with pytest.raises(ValueError):
        init_model(ModelConfig(image_size=30), 0)
    with pytest.raises(ValueError):
        init_model(ModelConfig(embed_dim=10, heads=4), 0)
    with pytest.raises(ValueError):
        init_model(ModelConfig(mode="diffuse"), 0)


def test_patchify_roundtrip():
    x = np.random.default_rng(1).random((2, 3, 8, 12, 3))
    p = patchify(x, 4)
    assert np.array_equal(unpatchify(p, 4, 8, 12, 3), x)


def test_forward_shape_errors():
    params = init_model(TINY, 0)
    with pytest.raises(ValueError):
        forward(params, TINY, np.zeros((1, 10, 8, 3)))


def test_spatial_permutation_equivariance():
    cfg = TINY.replace(image_size=8, frame_count=3)
    params = randomized(cfg, 1)
    x = np.random.default_rng(2).random((1, 8, 8, 3))
    # swap patch (0,0) with (1,1) in the anchor and the matching positional rows
    y = x.copy()
    y[:, 0:4, 0:4], y[:, 4:8, 4:8] = x[:, 4:8, 4:8], x[:, 0:4, 0:4]
    swapped = dict(params)
    pos = params["pos_spatial"].data.copy()
    pos[[0, 3]] = pos[[3, 0]]
    swapped["pos_spatial"] = Tensor(pos)
    a = predict(params, cfg, x)
    b = predict(swapped, cfg, y)
    want = a.copy()
    want[..., 0:4, 0:4, :], want[..., 4:8, 4:8, :] = a[..., 4:8, 4:8, :], a[..., 0:4, 0:4, :]
    assert np.allclose(b, want, atol=1e-12)


@pytest.mark.parametrize("mode", ["regress", "flow"])
def test_model_gradients(mode):
    cfg = TINY.replace(mode=mode)
    params = randomized(cfg, 3)
    assert param_count(params) <= 5000
    rng = np.random.default_rng(4)
    clip = rng.random((2, 2, 8, 8, 3))
    names = list(params)

    def f(ts):
        p = dict(zip(names, ts))
        return training_loss(p, cfg, clip, np.random.default_rng(9))

    assert nx.finite_diff_check(f, [params[k] for k in names]) < 1e-4


def test_loss_zero_when_prediction_matches():
    cfg = TINY
    params = init_model(cfg, 0, np.float64)
    clip = np.zeros((1, 2, 8, 8, 3))
    assert float(training_loss(params, cfg, clip, np.random.default_rng(0)).data) == 0.0


def test_loss_hand_value():
    # a fresh model predicts 0 everywhere: mse against 0.5 is 0.25
    clip = build_pseudo_clip(np.full((8, 8, 3), 0.5), np.full((8, 8, 3), 0.5), 1)
    assert float(training_loss(init_model(TINY, 0, np.float64), TINY, clip, np.random.default_rng(0)).data) == pytest.approx(0.25, abs=1e-15)
    # with the skip, frames 0 -> 1 are predicted as the anchor 0: half the frames miss by 1
    skip = TINY.replace(anchor_skip=True)
    clip = build_pseudo_clip(np.zeros((8, 8, 3)), np.ones((8, 8, 3)), 1)
    assert float(training_loss(init_model(skip, 0, np.float64), skip, clip, np.random.default_rng(0)).data) == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("mode", ["regress", "flow"])
def test_loss_non_negative(mode):
    cfg = TINY.replace(mode=mode, condition_dropout_prob=0.5)
    for seed in range(100):
        params = randomized(cfg, seed, scale=0.1)
        clip = np.random.default_rng(seed).random((1, 2, 8, 8, 3))
        assert float(training_loss(params, cfg, clip, np.random.default_rng(seed)).data) >= 0.0


def test_loss_frame_count_mismatch():
    with pytest.raises(ValueError):
        training_loss(init_model(TINY, 0), TINY, np.zeros((1, 3, 8, 8, 3)), np.random.default_rng(0))


def test_other_resolution_uses_resampled_positions():
    cfg = TINY.replace(image_size=8)
    params = randomized(cfg, 5)
    out = predict(params, cfg, np.random.default_rng(6).random((1, 12, 16, 3)))
    assert out.shape == (1, 2, 12, 16, 3) and np.all(np.isfinite(out))
