import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from pydantic import ValidationError

from anchorstream.core.ctc import ctc_loss
from anchorstream.core.model import (
    ModelState,
    backward,
    base_fingerprint,
    effective_weight,
    flatten_gradients,
    flatten_params,
    flatten_trainable,
    forward,
    forward_with_cache,
    init_model,
    trainable_size,
    unflatten_params,
    unflatten_trainable,
    with_fresh_adapters,
)
from anchorstream.core.tensor import RngState, gaussian, log_softmax_rows
from anchorstream.exceptions import DomainError, ShapeError
from anchorstream.schemas.config import ModelConfig


def _feats(cfg, n_frames=6, seed=1):
    return gaussian(RngState(seed), (n_frames, cfg.feat_dim))


def test_fresh_adapters_leave_outputs_identical(tiny_model):
    for seed in range(10):
        feats = _feats(tiny_model.config, n_frames=seed + 1, seed=seed)
        assert_allclose(forward(tiny_model, feats), forward(tiny_model, feats, use_adapters=False), rtol=0, atol=1e-12)


def test_logits_have_blank_column(tiny_model):
    logits = forward(tiny_model, _feats(tiny_model.config))
    assert logits.shape == (6, tiny_model.config.vocab_size + 1)


def test_base_weights_are_read_only(tiny_model):
    with pytest.raises(ValueError):
        tiny_model.base["input.W"][0, 0] = 1.0


def test_trainable_vector_layout(tiny_model):
    theta = flatten_trainable(tiny_model)
    assert theta.size == trainable_size(tiny_model.config)
    names = tiny_model.trainable_names()
    assert names[:2] == ["layers.0.attn.q.lora_A", "layers.0.attn.q.lora_B"]
    assert_array_equal(flatten_trainable(unflatten_trainable(tiny_model, theta)), theta)


def test_adapter_updates_never_touch_base(tiny_model):
    before = base_fingerprint(tiny_model)
    theta = flatten_trainable(tiny_model)
    updated = unflatten_trainable(tiny_model, theta + 0.3)
    assert base_fingerprint(updated) == before
    assert not np.array_equal(forward(updated, _feats(tiny_model.config)), forward(tiny_model, _feats(tiny_model.config)))


def test_effective_weight_merges_scaled_low_rank_update(tiny_model):
    updated = unflatten_trainable(tiny_model, gaussian(RngState(2), flatten_trainable(tiny_model).shape))
    a = updated.adapters["layers.0.attn.v.lora_A"]
    b = updated.adapters["layers.0.attn.v.lora_B"]
    expected = updated.base["layers.0.attn.v.W"] + updated.config.scaling * (b @ a)
    assert_allclose(effective_weight(updated, 0, "v"), expected)
    assert_array_equal(effective_weight(updated, 0, "k"), updated.base["layers.0.attn.k.W"])


def test_initial_adapters_have_zero_b(tiny_model):
    for name, arr in tiny_model.adapters.items():
        if name.endswith("lora_B"):
            assert not arr.any()
        else:
            assert arr.std() > 0


def test_with_fresh_adapters_can_change_rank(tiny_model, tiny_model_config):
    wider = tiny_model_config.model_copy(update={"lora_rank": 4, "lora_alpha": 8.0})
    model = with_fresh_adapters(tiny_model, RngState(0), wider)
    assert model.adapters["layers.0.attn.q.lora_A"].shape == (4, 8)
    assert base_fingerprint(model) == base_fingerprint(tiny_model)


def test_with_fresh_adapters_rejects_other_architecture(tiny_model, tiny_model_config):
    other = tiny_model_config.model_copy(update={"d_model": 16})
    with pytest.raises(ShapeError):
        with_fresh_adapters(tiny_model, RngState(0), other)


def test_forward_rejects_wrong_feature_width(tiny_model):
    with pytest.raises(ShapeError):
        forward(tiny_model, np.zeros((3, tiny_model.config.feat_dim + 1)))


@pytest.mark.parametrize("subset", ["lora", "base"])
def test_backward_matches_finite_differences(tiny_model, subset):
    model = unflatten_trainable(tiny_model, flatten_trainable(tiny_model) + gaussian(RngState(4), flatten_trainable(tiny_model).shape, 0, 0.1))
    feats = _feats(model.config, n_frames=5)
    labels = (1, 2)
    logits, cache = forward_with_cache(model, feats)
    _, dlogits = ctc_loss(log_softmax_rows(logits), labels)
    analytic = flatten_gradients(backward(model, feats, dlogits, subset, cache), model.parameter_names(subset))

    theta = flatten_params(model, subset)
    eps = 1e-6
    for i in RngState(5).generator.choice(theta.size, size=8, replace=False):
        plus, minus = theta.copy(), theta.copy()
        plus[i] += eps
        minus[i] -= eps
        lp = ctc_loss(log_softmax_rows(forward(unflatten_params(model, plus, subset), feats)), labels)[0]
        lm = ctc_loss(log_softmax_rows(forward(unflatten_params(model, minus, subset), feats)), labels)[0]
        assert analytic[i] == pytest.approx((lp - lm) / (2 * eps), rel=1e-4, abs=1e-6)


def test_backward_rejects_mismatched_upstream_gradient(tiny_model):
    feats = _feats(tiny_model.config)
    with pytest.raises(ShapeError):
        backward(tiny_model, feats, np.zeros((2, 2)))


def test_empty_subset_is_a_domain_error(tiny_model):
    bare = ModelState(config=tiny_model.config, base=tiny_model.base)
    with pytest.raises(DomainError):
        backward(bare, _feats(tiny_model.config), np.zeros((6, 5)))


def test_same_seed_same_model(tiny_model_config):
    a = init_model(tiny_model_config, RngState(8))
    b = init_model(tiny_model_config, RngState(8))
    assert base_fingerprint(a) == base_fingerprint(b)
    assert_array_equal(flatten_trainable(a), flatten_trainable(b))


@pytest.mark.parametrize(
    "overrides",
    [{"d_model": 30, "n_heads": 4}, {"lora_rank": 64}, {"lora_rank": 0}, {"lora_targets": ()}, {"unknown": 1}],
)
def test_invalid_model_config_is_rejected(overrides):
    with pytest.raises(ValidationError):
        ModelConfig(**overrides)


def test_doubling_alpha_while_halving_the_update_keeps_outputs(tiny_model):
    theta = flatten_trainable(tiny_model)
    adapted = unflatten_trainable(tiny_model, theta + gaussian(RngState(4), theta.shape, 0.0, 0.3))
    doubled = ModelState(
        config=adapted.config.model_copy(update={"lora_alpha": 2 * adapted.config.lora_alpha}),
        base=adapted.base,
        adapters={n: a / 2 if n.endswith("lora_B") else a for n, a in adapted.adapters.items()},
    )
    feats = _feats(tiny_model.config)
    assert not np.allclose(forward(adapted, feats), forward(adapted, feats, use_adapters=False))
    assert_allclose(forward(doubled, feats), forward(adapted, feats), rtol=1e-12, atol=1e-12)


def test_each_trainable_coordinate_maps_to_exactly_one_entry(tiny_model):
    theta = flatten_trainable(tiny_model)
    names = tiny_model.trainable_names()
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] += 1e-3
        model = unflatten_trainable(tiny_model, bumped)
        changed = sum(int(np.count_nonzero(model.adapters[n] != tiny_model.adapters[n])) for n in names)
        assert changed == 1, i
        assert all(model.base[n] is tiny_model.base[n] for n in tiny_model.base)
