import numpy as np
import pytest
import torch

from conftest import check_module_gradients
from dualmodseg.errors import BadSpatialDims, BottleneckWidthMismatch, ShapeMismatch
from dualmodseg.network import (
    ChannelSelfAttention,
    CrossModalFusion,
    Decoder,
    DualBranchNet,
    Encoder,
    NetworkConfig,
    SingleBranchNet,
)


def randomize(module, seed):
    gen = torch.Generator().manual_seed(seed)
    for p in module.parameters():
        p.data = torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.5
    return module


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(channel_dims=(8, 16, 32, 64)),  # not 5 levels
        dict(channel_dims=(8, 16, 16, 64, 128)),  # not strictly increasing
        dict(channel_dims=(8, 16, 32, 64, 127)),  # odd
        dict(crop=(150, 160)),  # not /16
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        NetworkConfig(**kwargs).validate()


def test_encoder_shapes_scaled():
    enc = Encoder(1, (4, 8, 16, 32, 64))
    maps = enc(torch.randn(2, 1, 16, 16))
    shapes = [tuple(m.shape) for m in maps]
    assert shapes == [
        (2, 4, 16, 16),
        (2, 8, 8, 8),
        (2, 16, 4, 4),
        (2, 32, 2, 2),
        (2, 64, 1, 1),
    ]


def test_encoder_bad_spatial_dims():
    enc = Encoder(1, (4, 8, 16, 32, 64))
    with pytest.raises(BadSpatialDims):
        enc(torch.randn(1, 1, 150, 150))


def test_attention_identity_at_init():
    attn = ChannelSelfAttention(channels=512, spatial_size=100, attention_dim=64)
    f = torch.randn(2, 512, 10, 10)
    f_e, f_a = attn(f)
    assert torch.equal(f_e, f)  # bitwise: zero-init output projection
    assert torch.equal(f_a, torch.zeros_like(f))


def test_attention_rows_sum_to_one():
    attn = randomize(ChannelSelfAttention(4, 4, 8), seed=3)
    weights = attn.attention_weights(torch.randn(2, 4, 2, 2))
    assert weights.shape == (2, 4, 4)
    np.testing.assert_allclose(weights.sum(-1).detach().numpy(), 1.0, atol=1e-5)


def test_attention_shape_mismatch():
    attn = ChannelSelfAttention(4, 4, 8)
    with pytest.raises(ShapeMismatch):
        attn(torch.randn(1, 4, 3, 3))
    with pytest.raises(ShapeMismatch):
        attn(torch.randn(1, 8, 2, 2))


def test_attention_gradients_match_finite_differences():
    torch.manual_seed(0)
    attn = randomize(ChannelSelfAttention(4, 4, 8), seed=5).double()
    x = torch.randn(1, 4, 2, 2, dtype=torch.float64)
    check_module_gradients(attn, lambda: attn(x)[0].sum())


def test_fusion_output_in_unit_interval():
    fuse = randomize(CrossModalFusion(4), seed=1)
    out = fuse(torch.randn(2, 4, 2, 2), torch.randn(2, 4, 2, 2))
    assert out.shape == (2, 4, 2, 2)
    assert (out > 0).all() and (out < 1).all()


def test_fusion_asymmetry():
    fuse = randomize(CrossModalFusion(4), seed=2)
    x = torch.randn(1, 4, 2, 2, generator=torch.Generator().manual_seed(7))
    y = torch.randn(1, 4, 2, 2, generator=torch.Generator().manual_seed(8))
    diff = (fuse(x, y) - fuse(y, x)).norm().item()
    assert diff > 0


def test_fusion_shape_mismatch():
    fuse = CrossModalFusion(4)
    with pytest.raises(ShapeMismatch):
        fuse(torch.randn(1, 4, 2, 2), torch.randn(1, 4, 4, 4))


def test_fusion_gradients_match_finite_differences():
    torch.manual_seed(0)
    fuse = randomize(CrossModalFusion(4), seed=9).double()
    fuse.train()
    x = torch.randn(1, 4, 2, 2, dtype=torch.float64)
    y = torch.randn(1, 4, 2, 2, dtype=torch.float64)
    check_module_gradients(fuse, lambda: fuse(x, y).sum())


def test_decoder_bottleneck_widths():
    dims = (4, 8, 16, 32, 64)
    enc = Encoder(1, dims)
    pyramid = enc(torch.randn(1, 1, 16, 16))
    dec_plain = Decoder(dims, 2, bottleneck_channels=64)
    assert dec_plain(pyramid, pyramid[-1]).shape == (1, 2, 16, 16)
    dec_wide = Decoder(dims, 2, bottleneck_channels=128)
    wide = torch.cat([pyramid[-1], pyramid[-1]], dim=1)
    assert dec_wide(pyramid, wide).shape == (1, 2, 16, 16)
    with pytest.raises(BottleneckWidthMismatch):
        dec_wide(pyramid, torch.cat([wide, pyramid[-1][:, :32]], dim=1))


def test_model_forward_shapes_and_softmax(tiny_net_config):
    torch.manual_seed(0)
    model = DualBranchNet(tiny_net_config)
    pred = model(torch.randn(2, 1, 16, 16), torch.randn(2, 1, 16, 16))
    assert pred.logits_a.shape == (2, 2, 16, 16)
    assert pred.logits_b.shape == (2, 2, 16, 16)
    total = pred.probs_a.sum(dim=1)
    np.testing.assert_allclose(total.detach().numpy(), 1.0, atol=1e-5)


def test_model_forward_zero_input_finite(tiny_net_config):
    torch.manual_seed(1)
    model = DualBranchNet(tiny_net_config)
    pred = model(torch.zeros(1, 1, 16, 16), torch.zeros(1, 1, 16, 16))
    assert torch.isfinite(pred.logits_a).all() and torch.isfinite(pred.logits_b).all()


def test_model_bottleneck_width_depends_on_fusion(tiny_net_config):
    torch.manual_seed(2)
    model = DualBranchNet(tiny_net_config)
    _, features = model(torch.randn(1, 1, 16, 16), torch.randn(1, 1, 16, 16), return_features=True)
    assert features["bottleneck_a"].shape[1] == 2 * tiny_net_config.channel_dims[-1]
    assert features["fused"].shape[1] == tiny_net_config.channel_dims[-1]

    from dataclasses import replace

    plain = DualBranchNet(replace(tiny_net_config, enable_cif=False))
    _, features = plain(torch.randn(1, 1, 16, 16), torch.randn(1, 1, 16, 16), return_features=True)
    assert features["bottleneck_a"].shape[1] == tiny_net_config.channel_dims[-1]
    assert features["fused"] is None


def test_disabled_flags_match_single_branch(tiny_net_config):
    from dataclasses import replace

    config = replace(tiny_net_config, enable_mem=False, enable_cif=False)
    torch.manual_seed(3)
    dual = DualBranchNet(config)
    single_a = SingleBranchNet(config)
    single_b = SingleBranchNet(config)
    single_a.encoder.load_state_dict(dual.encoder_a.state_dict())
    single_a.decoder.load_state_dict(dual.decoder_a.state_dict())
    single_b.encoder.load_state_dict(dual.encoder_b.state_dict())
    single_b.decoder.load_state_dict(dual.decoder_b.state_dict())

    dual.eval(), single_a.eval(), single_b.eval()
    img_a = torch.randn(2, 1, 16, 16, generator=torch.Generator().manual_seed(4))
    img_b = torch.randn(2, 1, 16, 16, generator=torch.Generator().manual_seed(5))
    with torch.no_grad():
        pred = dual(img_a, img_b)
        ref_a = single_a(img_a)
        ref_b = single_b(img_b)
    assert (pred.logits_a - ref_a).abs().max().item() < 1e-6
    assert (pred.logits_b - ref_b).abs().max().item() < 1e-6


def test_disabled_attention_is_identity(tiny_net_config):
    from dataclasses import replace

    torch.manual_seed(6)
    model = DualBranchNet(replace(tiny_net_config, enable_mem=False))
    f = torch.randn(1, tiny_net_config.channel_dims[-1], 1, 1)
    f_e, f_a = model.enhance(f, "a")
    assert torch.equal(f_e, f)
    assert torch.equal(f_a, torch.zeros_like(f))


def test_checkpoint_parameter_names(tiny_net_config):
    model = DualBranchNet(tiny_net_config)
    names = set(model.state_dict())
    assert "encoder_a.levels.0.conv1.weight" in names
    assert "attention_b.query.weight" in names
    assert "fusion.fuse.bn2.running_var" in names
    assert "decoder_b.head.bias" in names
