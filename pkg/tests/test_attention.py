import numpy as np
import pytest

from mushroomnet.attention import (PLACEMENTS, AttentionStrategy, ECABlock, SEBlock, build_strategy, eca_forward,
                                   eca_scale, placement_audit, se_forward, se_scale)
from mushroomnet.backbone import build_mushroomnet
from mushroomnet.errors import ConfigError, ShapeError
from mushroomnet.gradcheck import gradcheck
from mushroomnet.tensor import Tensor


class TestStrategyParsing:
    @pytest.mark.parametrize('tag,expected', [
        ('Model-4', AttentionStrategy.MODEL4),
        ('model_7', AttentionStrategy.MODEL7),
        ('PROPOSED', AttentionStrategy.PROPOSED),
        (AttentionStrategy.NONE, AttentionStrategy.NONE),
    ])
    def test_parse(self, tag, expected):
        assert AttentionStrategy.parse(tag) is expected

    def test_unknown_tag(self):
        with pytest.raises(ConfigError):
            AttentionStrategy.parse('model9')


class TestPlacement:
    @pytest.mark.parametrize('strategy', list(AttentionStrategy))
    def test_audit_matches_table(self, strategy):
        spec = build_mushroomnet(3, strategy=strategy, alpha=0.25, resolution=32)
        assert placement_audit(spec) == PLACEMENTS[strategy]
        assert spec.strategy == strategy.value

    def test_proposed_layout(self):
        spec = build_mushroomnet(3, strategy='proposed', alpha=0.25, resolution=32)
        names = [layer.name for layer in spec.layers]
        stem = names.index('stem')
        assert names[stem + 1:stem + 3] == ['attention.pre.0', 'attention.pre.1']
        assert names[names.index('final_conv') + 1] == 'attention.post.0'
        assert names[-1] == 'head'

    def test_pre_blocks_match_stem_width(self):
        spec = build_mushroomnet(3, strategy='model4', alpha=0.25, resolution=32)
        stem = spec.layer('stem')
        for layer in spec.attention_layers:
            anchor = stem if '.pre.' in layer.name else spec.layer('final_conv')
            assert layer.in_channels == layer.out_channels == anchor.out_channels

    def test_rebuilding_replaces_old_blocks(self):
        proposed = build_mushroomnet(3, strategy='proposed', alpha=0.25, resolution=32)
        model5 = build_strategy('model5', proposed)
        assert placement_audit(model5) == ((), ('eca',))
        stripped = build_strategy('none', proposed)
        assert stripped.attention_layers == []
        assert [layer.name for layer in stripped.layers] == \
            [layer.name for layer in proposed.layers if not layer.is_attention]

    def test_bneck_gates_are_not_attention_blocks(self):
        spec = build_mushroomnet(3, strategy='none', alpha=0.25, resolution=32)
        assert any(layer.bneck.se for layer in spec.layers if layer.kind == 'bneck')
        assert spec.attention_layers == []


class TestBlocks:
    def test_se_hidden_width(self):
        assert SEBlock.hidden_width(64, 16) == 4
        assert SEBlock.hidden_width(8, 16) == 1
        block = SEBlock.create(32, reduction=4, rng=np.random.default_rng(0))
        assert block.w1.shape == (8, 32) and block.w2.shape == (32, 8)

    def test_eca_kernel_must_be_odd(self):
        with pytest.raises(ConfigError):
            ECABlock.create(16, kernel=4)

    def test_scales_in_unit_interval(self, rng, float64):
        x = Tensor(rng.standard_normal((2, 16, 4, 4)))
        for scale in (se_scale(x, SEBlock.create(16, 4, rng)), eca_scale(x, ECABlock.create(16, 5, rng))):
            assert scale.shape == (2, 16)
            assert np.all((scale.data > 0) & (scale.data < 1))

    def test_zero_weights_halve_the_input(self, rng, float64):
        x = Tensor(rng.standard_normal((1, 8, 3, 3)))
        block = ECABlock(8, Tensor(np.zeros(5)))
        np.testing.assert_allclose(eca_forward(x, block).data, 0.5 * x.data)

    def test_eca_scale_by_hand(self, float64):
        # squeezed channels [1, 2, 3], kernel [0, 1, 0] passes them straight to the gate
        x = Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1, 1) * np.ones((1, 3, 2, 2)))
        scale = eca_scale(x, ECABlock(3, Tensor(np.array([0.0, 1.0, 0.0]))))
        np.testing.assert_allclose(scale.data, 1.0 / (1.0 + np.exp(-np.array([[1.0, 2.0, 3.0]]))))

    def test_vector_input(self, rng, float64):
        z = Tensor(rng.standard_normal((3, 8)))
        out = se_forward(z, SEBlock.create(8, 4, rng))
        assert out.shape == (3, 8)

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            se_forward(Tensor(np.zeros((1, 4, 2, 2))), SEBlock.create(8, 4, rng))
        with pytest.raises(ShapeError):
            eca_forward(Tensor(np.zeros((1, 4, 2, 2))), ECABlock.create(8, 5, rng))


class TestBlockGradients:
    @pytest.mark.parametrize('shape,reduction', [((2, 8, 3, 3), 2), ((1, 4, 2, 2), 4), ((3, 16, 1, 1), 4)])
    def test_se(self, rng, float64, shape, reduction):
        channels = shape[1]
        block = SEBlock.create(channels, reduction, rng)
        x = Tensor(rng.standard_normal(shape), requires_grad=True)
        fn = lambda x, w1, w2: se_forward(x, SEBlock(channels, w1, w2, reduction))  # noqa: E731
        assert gradcheck(fn, [x, block.w1, block.w2]) < 1e-5

    @pytest.mark.parametrize('shape,kernel', [((2, 8, 3, 3), 5), ((1, 4, 2, 2), 3), ((3, 16, 1, 1), 5)])
    def test_eca(self, rng, float64, shape, kernel):
        channels = shape[1]
        block = ECABlock.create(channels, kernel, rng)
        x = Tensor(rng.standard_normal(shape), requires_grad=True)
        fn = lambda x, w: eca_forward(x, ECABlock(channels, w))  # noqa: E731
        assert gradcheck(fn, [x, block.w]) < 1e-5
