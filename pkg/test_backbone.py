"""
Tests for network assembly: variant registry, parameter and FLOP counts,
the multi-scale head and train/eval forward behavior.
"""

import numpy as np
import pytest

from roadmamba.autograd import Tensor
from roadmamba.backbone import (
    VARIANTS,
    BackboneConfig,
    MultiScaleHead,
    RoadMamba,
    SelectionContext,
    StageTap,
    backbone_config,
    count_params,
    estimate_flops,
    estimate_flops_breakdown,
    multiscale_head,
)
from roadmamba.dualssm import DualSsmBlockConfig, ScanVariant
from roadmamba.errors import ConfigError, ShapeError
from roadmamba.scan2d import Mode


def _block_params(c, n):
    """Closed form of one DualSSM block's parameter count at width C."""
    return 10 * c * c + (34 + 12 * n) * c + 99


@pytest.fixture
def micro_model():
    return RoadMamba(backbone_config("micro"), rng=np.random.default_rng(0))


@pytest.fixture
def images(rng):
    return Tensor(rng.uniform(0.0, 1.0, size=(2, 64, 64, 3)))


# =============================================================================
# Registry
# =============================================================================


@pytest.mark.parametrize(
    "alias,name", [("T", "tiny"), ("roadmamba-s", "small"), ("b", "base"), ("Micro", "micro")]
)
def test_variant_aliases(alias, name):
    assert backbone_config(alias).name == name


def test_variant_widths_and_depths():
    assert VARIANTS["tiny"].depths == (1, 3, 6, 3)
    assert VARIANTS["small"].depths == (3, 3, 10, 3)
    assert VARIANTS["base"].widths == (128, 256, 512, 1024)
    assert backbone_config("tiny").head_width == 1440


def test_unknown_variant():
    with pytest.raises(ConfigError):
        backbone_config("huge")


def test_config_overrides_are_validated():
    assert backbone_config("micro", lambda_aux=0.0).has_aux_heads is False
    with pytest.raises(ConfigError):
        backbone_config("micro", image_side=62)
    with pytest.raises(ConfigError):
        backbone_config("micro", widths=(16, 32, 48, 128))
    with pytest.raises(ConfigError):
        backbone_config("micro", not_a_field=1)


def test_stage_sides():
    assert backbone_config("tiny").stage_sides() == [56, 28, 14, 7]
    assert backbone_config("micro").stage_sides() == [16, 8, 4, 2]


# =============================================================================
# Counts
# =============================================================================


def test_block_parameter_closed_form():
    from roadmamba.dualssm import DualSsmBlock

    for c, n in ((16, 4), (96, 12)):
        block = DualSsmBlock(DualSsmBlockConfig(channels=c, d_state=n))
        assert block.num_parameters() == _block_params(c, n)


def test_tiny_parameter_count_near_published():
    count = count_params(backbone_config("tiny"))
    assert count == 30_281_634
    assert abs(count - 28e6) / 28e6 <= 0.10


def test_base_parameter_count_near_published():
    count = count_params(backbone_config("base"))
    assert count == 78_179_683
    assert abs(count - 86e6) / 86e6 <= 0.10


def test_aux_heads_excluded_from_count(micro_model):
    total = micro_model.num_parameters()
    backbone = sum(p.size for _, p in micro_model.backbone_parameters())
    assert total > backbone == count_params(backbone_config("micro"))


def test_tiny_flops_near_published():
    gflops = estimate_flops(backbone_config("tiny"))
    assert abs(gflops - 5.1) / 5.1 <= 0.20


def test_flops_scale_with_mac_convention():
    config = backbone_config("micro")
    assert estimate_flops(config, flops_per_mac=2.0) == pytest.approx(2 * estimate_flops(config))
    breakdown = estimate_flops_breakdown(config)
    assert set(breakdown) >= {"stem", "stage1.blocks", "stage3.merge", "head"}
    assert sum(breakdown.values()) == pytest.approx(estimate_flops(config))


def test_flops_grow_with_image_side():
    config = backbone_config("micro")
    assert estimate_flops(config, image_side=128) > 3 * estimate_flops(config)


# =============================================================================
# Forward
# =============================================================================


def test_eval_forward_shapes(micro_model, images):
    out = micro_model.forward(images, Mode.EVAL)
    assert out.logits.shape == (2, 27)
    assert out.aux_logits == []
    assert [tap.feature.shape[1] for tap in out.taps] == [16, 8, 4, 2]
    assert [tap.pooled.shape for tap in out.taps] == [(2, 16), (2, 32), (2, 64), (2, 128)]


def test_train_forward_has_aux_logits_per_block(micro_model, images):
    out = micro_model.forward(images, Mode.TRAIN, SelectionContext(seed=1))
    assert len(out.aux_logits) == micro_model.config.num_blocks == 5
    for g, l_ in out.aux_logits:
        assert g.shape == l_.shape == (2, 27)


def test_global_only_aux_heads_have_no_local_output(images):
    config = backbone_config("micro", variant=ScanVariant.GLOBAL_ONLY)
    model = RoadMamba(config, rng=np.random.default_rng(0))
    out = model.forward(images, Mode.TRAIN, SelectionContext())
    assert all(l_ is None for _, l_ in out.aux_logits)


def test_eval_logits_do_not_depend_on_aux_heads(images):
    with_aux = RoadMamba(backbone_config("micro"), rng=np.random.default_rng(4))
    without = RoadMamba(backbone_config("micro", lambda_aux=0.0), rng=np.random.default_rng(4))
    assert without.aux_heads == []
    np.testing.assert_array_equal(
        with_aux.forward(images, Mode.EVAL).logits.data,
        without.forward(images, Mode.EVAL).logits.data,
    )


def test_train_forward_follows_selection_lineage(micro_model, images):
    a = micro_model.forward(images, Mode.TRAIN, SelectionContext(3, 0, 7)).logits.data
    b = micro_model.forward(images, Mode.TRAIN, SelectionContext(3, 0, 7)).logits.data
    c = micro_model.forward(images, Mode.TRAIN, SelectionContext(3, 0, 8)).logits.data
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_forward_rejects_bad_images(micro_model):
    with pytest.raises(ShapeError):
        micro_model.forward(Tensor(np.zeros((1, 64, 64, 1))))
    with pytest.raises(ShapeError):
        micro_model.forward(Tensor(np.zeros((1, 62, 62, 3))))


def test_parameter_names_are_dotted_paths(micro_model):
    names = [n for n, _ in micro_model.named_parameters()]
    assert names[0] == "stem.conv.weight"
    assert "stages.0.blocks.0.in_proj.weight" in names
    assert "stages.2.blocks.1.global_ssm.A_log" in names
    assert "aux_heads.0.local_fc.bias" in names
    assert len(names) == len(set(names))


def test_multiscale_head_concatenates_in_stage_order(rng):
    head = MultiScaleHead((2, 4, 8, 16), 3, rng=rng)
    taps = [
        StageTap(feature=Tensor(np.zeros((1, 1, 1, w))), pooled=Tensor(np.full((1, w), i)))
        for i, w in enumerate((2, 4, 8, 16))
    ]
    fused = head.fuse(taps).data[0]
    np.testing.assert_array_equal(fused, [0] * 2 + [1] * 4 + [2] * 8 + [3] * 16)
    assert multiscale_head(taps, head).shape == (1, 3)


def test_multiscale_head_rejects_wrong_taps(rng):
    head = MultiScaleHead((2, 4, 8, 16), 3, rng=rng)
    taps = [StageTap(Tensor(np.zeros((1, 1, 1, 2))), Tensor(np.zeros((1, 2))))] * 4
    with pytest.raises(ShapeError):
        head.fuse(taps)
    with pytest.raises(ShapeError):
        head.fuse(taps[:3])


def test_backbone_config_is_plain_dataclass():
    config = BackboneConfig("custom", 8, (8, 16, 32, 64), (1, 1, 1, 1), image_side=32, d_state=2)
    config.validate()
    assert config.block_config(2).channels == 32
