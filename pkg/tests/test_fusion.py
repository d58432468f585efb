import numpy as np
import pytest

from core import ops
from core.backbone import Backbone, BackboneConfig
from core.errors import ConfigurationError, DataError, DimensionError
from core.fusion import (FUSION_MODES, AttentionMap, FusionConfig, FusionHead, TagTransform,
                         TagVector, apply_attention, attention_map, fuse_before_code, fuse_codecat,
                         fuse_combined, transform_tag)
from core.gradcheck import tiny_backbone_config
from core.layers import Dense
from core.model import TagASCModel
from core.tensor import Tensor


def test_tag_vector_range():
    assert TagVector([0.0, 0.5, 1.0]).dim == 3
    with pytest.raises(DataError):
        TagVector([0.2, 1.2])
    with pytest.raises(DataError):
        TagVector([np.nan, 0.1])
    with pytest.raises(DimensionError):
        TagVector(np.zeros((2, 2)))


def test_zero_layer_transform_is_identity():
    tag = TagVector([0.1, 0.9, 0.3])
    assert transform_tag(tag, 0, 16, 3, []) is tag.values
    with pytest.raises(ConfigurationError):
        transform_tag(tag, 0, 16, 5, [])


def test_transform_widths(rng):
    stack = TagTransform("t", 5, 3, 7, 4, rng)
    assert [(l.d_in, l.d_out) for l in stack.layers] == [(5, 7), (7, 7), (7, 4)]
    assert stack(TagVector(np.full(5, 0.5))).shape == (4,)


def test_attention_map_segments(rng):
    stack = TagTransform("t", 4, 1, 6, 6, rng)
    head = Dense("h", 6, 8, rng)
    att = attention_map(TagVector([0.1, 0.2, 0.9, 0.4]), 1, 8, 4, (stack, head))
    assert isinstance(att, AttentionMap)
    np.testing.assert_allclose(att.segment_sums(), np.ones(4))
    with pytest.raises(ConfigurationError):
        attention_map(TagVector([0.1, 0.2, 0.9, 0.4]), 1, 8, 3, (stack, head))


def test_apply_attention_scales_filters():
    m = Tensor(np.ones((3, 4)))
    att = AttentionMap(Tensor([0.25, 0.75, 0.5, 0.5]), 2)
    np.testing.assert_allclose(apply_attention(m, att).data, np.tile([0.25, 0.75, 0.5, 0.5], (3, 1)))
    with pytest.raises(DimensionError):
        apply_attention(Tensor(np.ones((3, 6))), att)


def test_codecat_appends_tag():
    out = fuse_codecat(Tensor([1.0, 2.0]), TagVector([0.5]))
    np.testing.assert_array_equal(out.data, [1.0, 2.0, 0.5])


def test_heads_must_divide_filters():
    with pytest.raises(ConfigurationError):
        FusionConfig(mode="attention", n_heads=3).validate(128)
    FusionConfig(mode="codecat", n_heads=3).validate(128)


def test_shared_mode_has_fewer_parameters_than_separate():
    base = dict(n_transform_layers=2, transform_hidden_dim=6, n_heads=2,
                n_transform_layers_concat=2, n_transform_layers_att=2)
    shared = FusionHead(FusionConfig(mode="combined_shared", **base), 8, 3, 5, seed=0)
    separate = FusionHead(FusionConfig(mode="combined_separate", **base), 8, 3, 5, seed=0)
    assert shared.attention_transform is shared.concat_transform
    assert separate.attention_transform is not separate.concat_transform
    stack = 5 * 6 + 6 + 6 * 6 + 6
    assert separate.num_parameters() - shared.num_parameters() == stack


@pytest.mark.parametrize("mode", FUSION_MODES)
def test_model_forward_for_every_mode(mode, rng):
    cfg = FusionConfig(mode=mode, n_transform_layers=1, transform_hidden_dim=6, n_heads=2,
                       n_transform_layers_concat=1, n_transform_layers_att=2)
    backbone_cfg = tiny_backbone_config()
    model = TagASCModel(backbone_cfg, cfg, num_events=5, seed=0)
    tag = TagVector(rng.uniform(0, 1, 5), "x") if cfg.uses_tags else None
    out = model(rng.standard_normal((96, 1)), tag, "train")
    assert out.code.shape == (model.code_dim,)
    assert out.logits.shape == (2,)
    assert out.feature_map.shape == (2, 4)
    if cfg.uses_attention:
        np.testing.assert_allclose(out.attention.segment_sums(), np.ones(2))
    else:
        assert out.attention is None
    if mode == "codecat":
        assert model.code_dim == 3 + 5


def test_model_requires_matching_tag(rng):
    model = TagASCModel(tiny_backbone_config(), FusionConfig(mode="attention", n_heads=2),
                        num_events=5, seed=0)
    with pytest.raises(DataError):
        model(rng.standard_normal((96, 1)), None)
    with pytest.raises(DataError):
        model(rng.standard_normal((96, 1)), TagVector(np.full(4, 0.5)))


def test_full_scale_attention_with_non_divisor_heads():
    with pytest.raises(ConfigurationError):
        TagASCModel(BackboneConfig.full_scale(), FusionConfig(mode="attention", n_heads=3), 527, 0)


@pytest.mark.parametrize("heads", [2, 4, 8, 16, 32])
@pytest.mark.parametrize("depth", [0, 1, 2, 3])
def test_attention_map_invariants_over_the_head_grid(heads, depth, rng):
    cfg = FusionConfig(mode="attention", n_transform_layers=depth, transform_hidden_dim=32,
                       n_heads=heads)
    fusion = FusionHead(cfg, num_filters=128, code_dim=8, c=10, seed=depth)
    for _ in range(100):
        att = fusion.attention(TagVector(rng.uniform(0, 1, 10)))
        np.testing.assert_allclose(att.segment_sums(), np.ones(heads), atol=1e-9)
        assert np.all((att.values.data > 0) & (att.values.data < 1))

    logits = rng.standard_normal(128)
    shift = np.repeat(rng.uniform(-50, 50, heads), 128 // heads)
    np.testing.assert_allclose(ops.softmax_segments(Tensor(logits + shift), heads).data,
                               ops.softmax_segments(Tensor(logits), heads).data, atol=1e-9)


def test_apply_attention_is_linear_in_the_feature_map(rng):
    att = AttentionMap(ops.softmax_segments(Tensor(rng.standard_normal(16)), 4), 4)
    m1, m2 = rng.standard_normal((6, 16)), rng.standard_normal((6, 16))
    combined = apply_attention(Tensor(2.0 * m1 - 3.0 * m2), att).data
    separate = 2.0 * apply_attention(Tensor(m1), att).data \
        - 3.0 * apply_attention(Tensor(m2), att).data
    np.testing.assert_allclose(combined, separate, atol=1e-12)


def test_apply_attention_matches_elementwise_loops(rng):
    for _ in range(1000):
        h = int(rng.choice([1, 2, 4, 8]))
        f = h * int(rng.integers(1, 32 // h + 1))
        t = int(rng.integers(1, 9))
        m = rng.standard_normal((t, f))
        att = AttentionMap(ops.softmax_segments(Tensor(rng.standard_normal(f)), h), h)
        a = att.values.data
        expected = np.empty((t, f))
        for step in range(t):
            for i in range(f):
                expected[step, i] = m[step, i] * a[i]
        np.testing.assert_allclose(apply_attention(Tensor(m), att).data, expected, atol=1e-12)


def _zero(layer):
    layer.weight.data[...] = 0.0
    layer.bias.data[...] = 0.0


def test_hand_worked_attention_product():
    att = AttentionMap(Tensor([0.25, 0.75, 0.75, 0.25]), 2)
    out = apply_attention(Tensor([[1.0, 2.0, 3.0, 4.0]]), att).data
    np.testing.assert_allclose(out, [[0.25, 1.5, 2.25, 1.0]])


def test_zero_logits_give_a_uniform_map_and_scale_by_heads_over_filters(rng):
    cfg = FusionConfig(mode="attention", n_transform_layers=2, transform_hidden_dim=6, n_heads=2)
    fusion = FusionHead(cfg, num_filters=8, code_dim=3, c=5, seed=0)
    _zero(fusion.attention_head)
    for _ in range(5):
        att = fusion.attention(TagVector(rng.uniform(0, 1, 5)))
        np.testing.assert_allclose(att.values.data, np.full(8, 2 / 8), atol=1e-12)
        m = rng.standard_normal((4, 8))
        np.testing.assert_allclose(apply_attention(Tensor(m), att).data, (2 / 8) * m, atol=1e-12)


def test_per_head_logit_shift_leaves_the_attended_map_unchanged(rng):
    cfg = FusionConfig(mode="attention", n_transform_layers=1, transform_hidden_dim=6, n_heads=2)
    model = TagASCModel(tiny_backbone_config(), cfg, num_events=5, seed=0)
    wave, tag = rng.standard_normal((96, 1)), TagVector(rng.uniform(0, 1, 5))
    m = model.backbone.features(wave, "infer")
    before = apply_attention(m, model.fusion.attention(tag)).data
    model.fusion.attention_head.bias.data[:] += np.repeat([3.0, -7.0], 2)
    after = apply_attention(m, model.fusion.attention(tag)).data
    np.testing.assert_allclose(after, before, atol=1e-9)


def test_zeroed_transform_makes_before_code_ignore_the_tag(rng):
    cfg = FusionConfig(mode="before_code", n_transform_layers=2, transform_hidden_dim=6)
    fusion = FusionHead(cfg, num_filters=4, code_dim=3, c=5, seed=0)
    _zero(fusion.concat_transform.layers[-1])
    pooled = Tensor(rng.standard_normal(8))
    first = fuse_before_code(pooled, TagVector(rng.uniform(0, 1, 5)), cfg, fusion).data
    second = fuse_before_code(pooled, TagVector(rng.uniform(0, 1, 5)), cfg, fusion).data
    np.testing.assert_allclose(first, second, atol=1e-12)
    w, b = fusion.code_layer.weight.data, fusion.code_layer.bias.data
    np.testing.assert_allclose(first, pooled.data @ w[:8] + b, atol=1e-12)


@pytest.mark.parametrize("mode", ["combined_shared", "combined_separate"])
def test_zeroed_combined_reduces_to_the_scaled_baseline(mode, rng):
    cfg = FusionConfig(mode=mode, n_transform_layers=2, transform_hidden_dim=6, n_heads=2,
                       n_transform_layers_concat=2, n_transform_layers_att=1)
    fusion = FusionHead(cfg, num_filters=8, code_dim=3, c=5, seed=0)
    _zero(fusion.attention_head)
    _zero(fusion.concat_transform.layers[-1])
    m = rng.standard_normal((6, 8))
    code, att = fuse_combined(Backbone.pool, Tensor(m), TagVector(rng.uniform(0, 1, 5)), cfg,
                              fusion)
    np.testing.assert_allclose(att.values.data, np.full(8, 2 / 8), atol=1e-12)
    w, b = fusion.code_layer.weight.data, fusion.code_layer.bias.data
    baseline = Backbone.pool(Tensor((2 / 8) * m)).data @ w[:16] + b
    np.testing.assert_allclose(code.data, baseline, atol=1e-12)
