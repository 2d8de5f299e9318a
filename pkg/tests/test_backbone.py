import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import avg_pool_loops, linear_loops, max_pool_loops

from disent_reid.backbone import (
    BackboneConfig,
    classifier,
    forward,
    init_params,
    load_checkpoint,
    pool_head,
    save_checkpoint,
)
from disent_reid.gca import GATE_ONLY
from disent_reid.gradcheck import forward_case, tiny_backbone
from disent_reid.tensor import Tensor, grad_check

T = Tensor


def small_cfg(**kw):
    base = {"height": 16, "width": 8, "stem_channels": 4, "stage_channels": (4, 6, 8, 8), "num_classes": 5}
    return BackboneConfig(**{**base, **kw})


def test_default_topology():
    cfg = BackboneConfig()
    assert (cfg.height, cfg.width) == (64, 32)
    assert cfg.stage_channels == (16, 32, 64, 128) and cfg.stage_strides == (2, 2, 2, 1)
    assert cfg.gca_modes == ("attention_and_gate",) * 3 + ("gate_only",)
    assert cfg.embed_dim == 128


def test_config_invariants():
    with pytest.raises(ValueError, match="stride 1"):
        BackboneConfig(stage_strides=(2, 2, 2, 2))
    with pytest.raises(ValueError, match="4 entries"):
        BackboneConfig(stage_channels=(16, 32, 64))
    with pytest.raises(ValueError, match="nondecreasing"):
        BackboneConfig(stage_channels=(32, 16, 64, 128))


def test_init_scheme():
    params = init_params(BackboneConfig(), np.random.default_rng(0))
    assert not params["stem.b"].data.any()
    np.testing.assert_array_equal(params["s1.gca.k"].data, np.full(3, 1 / 3))
    assert "s4.gca.k" not in params
    w = params["s3.b1.conv1.w"].data
    assert abs(w.std() - np.sqrt(2 / (32 * 9))) < 0.01


def test_output_shapes(rng):
    cfg = BackboneConfig()
    params = init_params(cfg, rng)
    emb, logits, feats = forward(rng.uniform(size=(2, 3, 64, 32)), rng.uniform(size=(2, 64, 32)), params, cfg)
    assert emb.shape == (2, 128) and logits.shape == (2, 20)
    assert feats.shape == (2, 128, 8, 4)


def test_zero_params_give_bias_logits(rng):
    cfg = small_cfg()
    params = init_params(cfg, rng)
    for p in params.values():
        p.data = np.zeros_like(p.data)
    params["fc.b"].data = rng.normal(size=5)
    emb, logits, _ = forward(rng.uniform(size=(3, 3, 16, 8)), rng.uniform(size=(3, 16, 8)), params, cfg)
    assert not emb.data.any()
    np.testing.assert_array_equal(logits.data, np.tile(params["fc.b"].data, (3, 1)))


def test_zero_mask_stem_matches_no_mask(rng):
    cfg = small_cfg()
    params = init_params(cfg, rng)
    params["mask_stem.w"].data = np.zeros_like(params["mask_stem.w"].data)
    images = rng.uniform(size=(2, 3, 16, 8))
    with_mask = forward(images, rng.uniform(size=(2, 16, 8)), params, cfg)
    without = forward(images, None, params, cfg)
    for a, b in zip(with_mask, without):
        assert a.data.tobytes() == b.data.tobytes()


def test_zero_mask_with_zero_init_stem(rng):
    cfg = small_cfg()
    params = init_params(cfg, rng)
    params["mask_stem.w"].data = np.zeros_like(params["mask_stem.w"].data)
    images = rng.uniform(size=(2, 3, 16, 8))
    a = forward(images, np.zeros((2, 16, 8)), params, cfg)[0].data
    b = forward(images, None, params, cfg)[0].data
    assert a.tobytes() == b.tobytes()


def test_mask_needs_cdm_params(rng):
    cfg = small_cfg(use_cdm=False)
    params = init_params(cfg, rng)
    with pytest.raises(ValueError, match="stage 1"):
        forward(rng.uniform(size=(1, 3, 16, 8)), np.zeros((1, 16, 8)), params, cfg)


def test_wrong_input_size_rejected(rng):
    cfg = small_cfg()
    with pytest.raises(ValueError, match="input"):
        forward(rng.uniform(size=(1, 3, 8, 8)), None, init_params(cfg, rng), cfg)


def test_mask_is_resized_to_input(rng):
    cfg = small_cfg()
    params = init_params(cfg, rng)
    images = rng.uniform(size=(1, 3, 16, 8))
    big = np.repeat(np.repeat(rng.uniform(size=(1, 16, 8)), 2, 1), 2, 2)
    a = forward(images, big, params, cfg)[0].data
    b = forward(images, big[:, ::2, ::2], params, cfg)[0].data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_pool_head_examples(rng):
    np.testing.assert_array_equal(pool_head(T(np.full((1, 3, 2, 2), 1.5))).data, np.full((1, 3), 1.5))
    x = rng.normal(size=(2, 3, 1, 1))
    np.testing.assert_array_equal(pool_head(T(x)).data, x[:, :, 0, 0])
    x = rng.uniform(-1, 1, size=(2, 4, 3, 5))
    np.testing.assert_allclose(pool_head(T(x)).data, 0.5 * (max_pool_loops(x) + avg_pool_loops(x)),
                               rtol=0, atol=1e-12)


def test_classifier_is_linear(rng):
    params = {"fc.w": T(rng.normal(size=(4, 6))), "fc.b": T(rng.normal(size=4))}
    e = rng.normal(size=(3, 6))
    np.testing.assert_allclose(classifier(T(e), params).data,
                               linear_loops(e, params["fc.w"].data, params["fc.b"].data), atol=1e-12)
    with pytest.raises(ValueError):
        classifier(T(rng.normal(size=(3, 5))), params)


def test_forward_gradients_every_parameter(rng):
    f, inputs = forward_case(rng)
    assert grad_check(f, inputs) <= 1e-4


def test_forward_gradients_rgb_only(rng):
    f, inputs = forward_case(rng, BackboneConfig(**{**tiny_backbone().__dict__, "use_cdm": False}))
    assert grad_check(f, inputs) <= 1e-4


def test_checkpoint_round_trip(tmp_path, rng):
    cfg = small_cfg()
    params = init_params(cfg, rng)
    save_checkpoint(tmp_path / "m.ckpt", params)
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert list(back) == list(params)
    for name in params:
        assert back[name].data.tobytes() == params[name].data.tobytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.ckpt")


@settings(max_examples=15)
@given(seed=st.integers(0, 2**32 - 1), use_cdm=st.booleans(), use_gca=st.booleans(),
       all_gate=st.booleans())
def test_shapes_stable_across_ablation_configs(seed, use_cdm, use_gca, all_gate):
    r = np.random.default_rng(seed)
    modes = (GATE_ONLY,) * 4 if all_gate else BackboneConfig().gca_modes
    cfg = small_cfg(use_cdm=use_cdm, use_gca=use_gca, gca_modes=modes)
    params = init_params(cfg, r)
    images = r.uniform(size=(2, 3, 16, 8))
    masks = r.uniform(size=(2, 16, 8)) if use_cdm else None
    emb, logits, feats = forward(images, masks, params, cfg)
    assert emb.shape == (2, 8) and logits.shape == (2, 5) and feats.shape == (2, 8, 2, 1)
    again = forward(images, masks, params, cfg)
    assert emb.data.tobytes() == again[0].data.tobytes()
