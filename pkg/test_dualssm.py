"""
Tests for the DualSSM block and the dual attention fusion.
"""

import numpy as np
import pytest

from roadmamba.autograd import Tensor, gradcheck, parameter, precision
from roadmamba.dualssm import (
    AggregatorAssignment,
    ChannelAttention,
    DualAttentionFusion,
    DualSsmBlock,
    DualSsmBlockConfig,
    ScanVariant,
    SpatialAttention,
    channel_attention,
    daf_fuse,
    parse_enum,
    spatial_attention,
)
from roadmamba.errors import ConfigError, ShapeError
from roadmamba.scan2d import Mode, selection_rng


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def _channel_oracle(y, att):
    w1, w2 = att.fc1.weight.data, att.fc2.weight.data
    avg = y.mean(axis=(1, 2))
    mx = y.max(axis=(1, 2))

    def mlp(u):
        return np.maximum(u @ w1, 0.0) @ w2

    return y * _sigmoid(mlp(avg) + mlp(mx))[:, None, None, :]


def _spatial_oracle(y, att):
    kernel, bias = att.conv.weight.data, att.conv.bias.data
    k = kernel.shape[-1]
    p = (k - 1) // 2
    maps = np.stack([y.mean(axis=-1), y.max(axis=-1)], axis=-1)
    padded = np.pad(maps, ((0, 0), (p, p), (p, p), (0, 0)))
    batch, height, width, _ = y.shape
    logits = np.zeros((batch, height, width))
    for b in range(batch):
        for i in range(height):
            for j in range(width):
                patch = padded[b, i : i + k, j : j + k, :]
                logits[b, i, j] = np.sum(patch.transpose(2, 0, 1) * kernel[0]) + bias[0]
    return y * _sigmoid(logits)[..., None]


def _micro_config(**overrides):
    fields = dict(channels=4, reduction=4, d_state=2, dt_rank=1, window_size=7)
    fields.update(overrides)
    return DualSsmBlockConfig(**fields)


# =============================================================================
# Attention
# =============================================================================


def test_channel_attention_matches_formula(rng):
    with precision(np.float64):
        att = ChannelAttention(8, 4, rng=rng)
        y = rng.normal(size=(2, 4, 4, 8))
        out = channel_attention(Tensor(y), att).data
    np.testing.assert_allclose(out, _channel_oracle(y, att), atol=1e-10)


def test_channel_attention_mlp_has_no_biases():
    names = [name for name, _ in ChannelAttention(8, 4).named_parameters()]
    assert names == ["fc1.weight", "fc2.weight"]


def test_spatial_attention_matches_formula(rng):
    with precision(np.float64):
        att = SpatialAttention(rng=rng)
        y = rng.normal(size=(1, 4, 4, 8))
        out = spatial_attention(Tensor(y), att).data
    np.testing.assert_allclose(out, _spatial_oracle(y, att), atol=1e-10)


def test_zero_weights_give_half(rng):
    y = Tensor(rng.normal(size=(1, 5, 5, 4)))
    channel = ChannelAttention(4, 2, rng=None)
    spatial = SpatialAttention(rng=None)
    np.testing.assert_array_equal(channel.weights(y).data, 0.5)
    np.testing.assert_array_equal(spatial.weights(y).data, 0.5)


def test_attention_weights_inside_unit_interval(rng):
    y = Tensor(rng.normal(scale=3.0, size=(2, 6, 6, 8)))
    for w in (ChannelAttention(8, 4, rng=rng).weights(y), SpatialAttention(rng=rng).weights(y)):
        assert np.all((w.data > 0) & (w.data < 1))


def test_channel_attention_width_mismatch(rng):
    with pytest.raises(ShapeError):
        ChannelAttention(8, 4, rng=rng).weights(Tensor(np.zeros((1, 2, 2, 4))))


def test_assignments_give_distinct_outputs(rng):
    y_g = Tensor(rng.normal(size=(1, 6, 6, 8)))
    y_l = Tensor(rng.normal(size=(1, 6, 6, 8)))
    outputs = {}
    for assignment in AggregatorAssignment:
        fusion = DualAttentionFusion(8, 4, assignment, rng=np.random.default_rng(5))
        outputs[assignment] = daf_fuse(y_g, y_l, fusion).data
    values = list(outputs.values())
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            assert not np.allclose(values[i], values[j])


def test_assignment_places_attention_on_each_stream(rng):
    gclt = DualAttentionFusion(8, 4, "GCLT", rng=rng)
    gtlc = DualAttentionFusion(8, 4, "GTLC", rng=rng)
    gltc = DualAttentionFusion(8, 4, "GLTC", rng=rng)
    assert isinstance(gclt.global_attention.stages[0], ChannelAttention)
    assert isinstance(gclt.local_attention.stages[0], SpatialAttention)
    assert isinstance(gtlc.global_attention.stages[0], SpatialAttention)
    assert isinstance(gtlc.local_attention.stages[0], ChannelAttention)
    assert [type(s) for s in gltc.global_attention.stages] == [ChannelAttention, SpatialAttention]


def test_plain_sum_without_daf(rng):
    fusion = DualAttentionFusion(8, 4, use_daf=False)
    y_g = rng.normal(size=(1, 3, 3, 8)).astype(np.float32)
    y_l = rng.normal(size=(1, 3, 3, 8)).astype(np.float32)
    np.testing.assert_allclose(fusion.attend(Tensor(y_g), Tensor(y_l)).data, y_g + y_l)
    assert fusion.parameters() == fusion.norm.parameters()


def test_fusion_stream_shape_mismatch(rng):
    fusion = DualAttentionFusion(8, 4, rng=rng)
    with pytest.raises(ShapeError):
        fusion(Tensor(np.zeros((1, 3, 3, 8))), Tensor(np.zeros((1, 4, 3, 8))))


def test_parse_enum_accepts_names_and_values():
    assert parse_enum(AggregatorAssignment, "gclt") is AggregatorAssignment.GCLT
    assert parse_enum(ScanVariant, "global_only") is ScanVariant.GLOBAL_ONLY
    with pytest.raises(ConfigError):
        parse_enum(ScanVariant, "serpentine")


# =============================================================================
# Block
# =============================================================================


def test_block_preserves_shape(rng):
    block = DualSsmBlock(_micro_config(), rng=rng)
    x = Tensor(rng.normal(size=(2, 8, 8, 4)))
    out = block(x, Mode.TRAIN, selection_rng(0))
    assert out.y.shape == (2, 8, 8, 4)
    assert out.taps.y_global.shape == out.taps.y_local.shape == (2, 8, 8, 8)


def test_zero_output_projection_is_identity(rng):
    block = DualSsmBlock(_micro_config(), rng=rng)
    block.out_proj.weight.data[...] = 0.0
    x = Tensor(rng.normal(size=(1, 8, 8, 4)))
    np.testing.assert_array_equal(block(x).y.data, x.data)


def test_global_only_block_has_no_local_branch(rng):
    block = DualSsmBlock(_micro_config(variant=ScanVariant.GLOBAL_ONLY), rng=rng)
    assert block.local_ssm is None
    assert block.fusion.local_attention is None
    out = block(Tensor(rng.normal(size=(1, 7, 7, 4))))
    assert out.taps.y_local is None


def test_local_only_block_scans_windows_in_both_slots(rng):
    block = DualSsmBlock(_micro_config(variant=ScanVariant.LOCAL_ONLY), rng=rng)
    out = block(Tensor(rng.normal(size=(1, 14, 14, 4))), Mode.TRAIN, selection_rng(3))
    # two of four windows scanned: the other two are exactly zero in both slots
    for tap in (out.taps.y_global.data, out.taps.y_local.data):
        zero_windows = sum(
            np.all(tap[:, p * 7 : (p + 1) * 7, q * 7 : (q + 1) * 7] == 0.0)
            for p in range(2)
            for q in range(2)
        )
        assert zero_windows == 2


def test_block_channel_mismatch(rng):
    block = DualSsmBlock(_micro_config(), rng=rng)
    with pytest.raises(ShapeError):
        block(Tensor(np.zeros((1, 8, 8, 5))))


def test_block_config_validation():
    with pytest.raises(ConfigError):
        DualSsmBlock(_micro_config(channels=6))
    with pytest.raises(ConfigError):
        DualSsmBlock(_micro_config(scan_path="diagonal"))


def test_train_forward_is_reproducible(rng):
    block = DualSsmBlock(_micro_config(), rng=rng)
    x = Tensor(rng.normal(size=(1, 14, 14, 4)))
    first = block(x, Mode.TRAIN, selection_rng(1, 0, 4, 0, 0)).y.data
    second = block(x, Mode.TRAIN, selection_rng(1, 0, 4, 0, 0)).y.data
    assert first.tobytes() == second.tobytes()


def test_both_branches_receive_gradients(rng):
    block = DualSsmBlock(_micro_config(), rng=rng)
    x = Tensor(rng.normal(size=(1, 8, 8, 4)))
    block(x, Mode.TRAIN, selection_rng(0)).y.sum().backward()
    for name, p in block.named_parameters():
        assert p.grad is not None, name
    for ssm in (block.global_ssm, block.local_ssm):
        assert np.any(ssm.proj.x_proj.weight.grad != 0)


def test_block_gradient_matches_finite_differences():
    with precision(np.float64):
        rng = np.random.default_rng(11)
        block = DualSsmBlock(_micro_config(), rng=rng)
        x = parameter(rng.normal(size=(1, 8, 8, 4)))
        w = rng.normal(size=(1, 8, 8, 4))

        def loss():
            out = block(x, Mode.TRAIN, selection_rng(2, 0, 0, 0, 0))
            return (out.y * w).sum()

        assert gradcheck(loss, [x] + block.parameters(), tol=1e-5)


def test_block_gradient_at_32_bit():
    rng = np.random.default_rng(12)
    block = DualSsmBlock(_micro_config(), rng=rng)
    x = parameter(rng.normal(size=(1, 8, 8, 4)))
    w = rng.normal(size=(1, 8, 8, 4)).astype(np.float32)

    def loss():
        return (block(x).y * w).sum()

    assert gradcheck(loss, [x, block.in_proj.weight], eps=1e-3, tol=1e-2)
