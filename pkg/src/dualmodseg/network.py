"""Dual-branch segmentation network with channel attention and cross-modal fusion.

Each modality gets its own five-level U-Net encoder (no weight sharing).
The deepest feature map of each branch is refined by channel-wise
self-attention with a zero-initialized output projection, so at
initialization the enhancement is an exact identity.  A shared fusion
layer concatenates both enhanced features, runs two conv blocks and a
sigmoid, and the fused map is concatenated back into each branch's
bottleneck before decoding.

Checkpoint parameter names follow module attribute paths, e.g.
``encoder_a.levels.0.conv1.weight``, ``attention_b.query.weight``,
``fusion.fuse.bn2.running_var``, ``decoder_a.stages.2.block.conv1.bias``,
``decoder_b.head.weight``.
"""

from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import BadSpatialDims, BottleneckWidthMismatch, ShapeMismatch

DEFAULT_CHANNEL_DIMS = (32, 64, 128, 256, 512)


@dataclass
class NetworkConfig:
    in_channels: int = 1
    n_classes: int = 2
    channel_dims: tuple = DEFAULT_CHANNEL_DIMS
    crop: tuple = (160, 160)
    enable_mem: bool = True
    enable_cif: bool = True
    attention_dim: int = 64

    def validate(self):
        dims = tuple(self.channel_dims)
        if len(dims) != 5:
            raise ValueError(f"channel_dims must have 5 entries, got {dims}")
        if any(a >= b for a, b in zip(dims, dims[1:])):
            raise ValueError(f"channel_dims must be strictly increasing, got {dims}")
        if any(d % 2 for d in dims):
            raise ValueError(f"channel_dims must be even, got {dims}")
        h, w = self.crop
        if h % 16 or w % 16:
            raise ValueError(f"crop must be divisible by 16, got {self.crop}")

    def to_dict(self):
        d = asdict(self)
        d["channel_dims"] = list(self.channel_dims)
        d["crop"] = list(self.crop)
        return d

    @classmethod
    def from_dict(cls, d):
        kwargs = dict(d)
        kwargs["channel_dims"] = tuple(kwargs.get("channel_dims", DEFAULT_CHANNEL_DIMS))
        kwargs["crop"] = tuple(kwargs.get("crop", (160, 160)))
        return cls(**kwargs)


@dataclass
class DualPrediction:
    logits_a: torch.Tensor  # (B, n_classes, H, W)
    logits_b: torch.Tensor
    probs_a: torch.Tensor  # softmax over the class axis
    probs_b: torch.Tensor


class DoubleConv(nn.Module):
    """Two 3x3 conv + batch-norm + ReLU blocks."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(out_ch)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        return F.relu(self.bn2(self.conv2(x)))


class Encoder(nn.Module):
    """Five conv levels with four 2x2 max-poolings; returns all feature maps."""

    def __init__(self, in_channels, channel_dims):
        super().__init__()
        dims = list(channel_dims)
        self.levels = nn.ModuleList(
            [DoubleConv(prev, cur) for prev, cur in zip([in_channels] + dims[:-1], dims)]
        )
        self.pool = nn.MaxPool2d(2)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 16 or w % 16 or h < 16 or w < 16:
            raise BadSpatialDims(f"input {h}x{w} must be divisible by 16")
        maps = []
        for i, level in enumerate(self.levels):
            x = level(x if i == 0 else self.pool(x))
            maps.append(x)
        return maps


class ChannelSelfAttention(nn.Module):
    """Channel-wise self-attention over the deepest feature map, residual by design.

    Per-channel spatial descriptors are projected along the spatial axis to
    queries/keys; the CxC attention matrix mixes channel values.  The output
    projection starts at zero, so the module is an identity at init.
    """

    def __init__(self, channels, spatial_size, attention_dim):
        super().__init__()
        self.channels = channels
        self.spatial_size = spatial_size
        self.scale = attention_dim ** -0.5
        self.query = nn.Linear(spatial_size, attention_dim, bias=False)
        self.key = nn.Linear(spatial_size, attention_dim, bias=False)
        self.value = nn.Linear(spatial_size, spatial_size, bias=False)
        self.out_proj = nn.Conv2d(channels, channels, 1)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)

    def _check(self, f):
        b, c, h, w = f.shape
        if c != self.channels or h * w != self.spatial_size:
            raise ShapeMismatch(
                f"expected ({self.channels}, spatial {self.spatial_size}), got {tuple(f.shape)}"
            )

    def attention_weights(self, f):
        """(B, C, h, w) -> row-stochastic (B, C, C) attention matrix."""
        self._check(f)
        flat = f.flatten(2)
        q, k = self.query(flat), self.key(flat)
        return torch.softmax(q @ k.transpose(1, 2) * self.scale, dim=-1)

    def forward(self, f):
        self._check(f)
        b, c, h, w = f.shape
        flat = f.flatten(2)
        q, k, v = self.query(flat), self.key(flat), self.value(flat)
        attn = torch.softmax(q @ k.transpose(1, 2) * self.scale, dim=-1)
        f_a = self.out_proj((attn @ v).view(b, c, h, w))
        return f_a + f, f_a


class CrossModalFusion(nn.Module):
    """Concatenate both branches' features, two conv blocks, sigmoid-stabilized output."""

    def __init__(self, channels):
        super().__init__()
        self.fuse = DoubleConv(2 * channels, channels)

    def forward(self, f_a, f_b):
        if f_a.shape != f_b.shape:
            raise ShapeMismatch(f"fusion inputs differ: {tuple(f_a.shape)} vs {tuple(f_b.shape)}")
        return torch.sigmoid(self.fuse(torch.cat([f_a, f_b], dim=1)))


class DecoderStage(nn.Module):
    def __init__(self, in_ch, skip_ch, out_ch):
        super().__init__()
        self.block = DoubleConv(in_ch + skip_ch, out_ch)

    def forward(self, x, skip):
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return self.block(torch.cat([x, skip], dim=1))


class Decoder(nn.Module):
    """Four upsample+skip stages consuming encoder levels 4..1, then a 1x1 head."""

    def __init__(self, channel_dims, n_classes, bottleneck_channels):
        super().__init__()
        dims = list(channel_dims)
        self.bottleneck_channels = bottleneck_channels
        ins = [bottleneck_channels, dims[3], dims[2], dims[1]]
        skips = [dims[3], dims[2], dims[1], dims[0]]
        self.stages = nn.ModuleList(
            [DecoderStage(i, s, s) for i, s in zip(ins, skips)]
        )
        self.head = nn.Conv2d(dims[0], n_classes, 1)

    def forward(self, pyramid, bottleneck):
        if bottleneck.shape[1] != self.bottleneck_channels:
            raise BottleneckWidthMismatch(
                f"bottleneck has {bottleneck.shape[1]} channels, decoder expects {self.bottleneck_channels}"
            )
        x = bottleneck
        for stage, skip in zip(self.stages, pyramid[3::-1]):
            x = stage(x, skip)
        return self.head(x)


class DualBranchNet(nn.Module):
    """Two modality branches with optional attention enhancement and shared fusion."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        config.validate()
        self.config = config
        dims = tuple(config.channel_dims)
        c = dims[-1]
        h, w = config.crop
        spatial = (h // 16) * (w // 16)

        self.encoder_a = Encoder(config.in_channels, dims)
        self.encoder_b = Encoder(config.in_channels, dims)
        if config.enable_mem:
            self.attention_a = ChannelSelfAttention(c, spatial, config.attention_dim)
            self.attention_b = ChannelSelfAttention(c, spatial, config.attention_dim)
        if config.enable_cif:
            self.fusion = CrossModalFusion(c)
        bottleneck = 2 * c if config.enable_cif else c
        self.decoder_a = Decoder(dims, config.n_classes, bottleneck)
        self.decoder_b = Decoder(dims, config.n_classes, bottleneck)

    def enhance(self, f_ls, branch):
        """Attention enhancement of the deepest feature; identity when disabled."""
        if not self.config.enable_mem:
            return f_ls, torch.zeros_like(f_ls)
        module = self.attention_a if branch == "a" else self.attention_b
        return module(f_ls)

    def forward(self, image_a, image_b, return_features=False):
        pyramid_a = self.encoder_a(image_a)
        pyramid_b = self.encoder_b(image_b)
        f_e_a, f_a_a = self.enhance(pyramid_a[-1], "a")
        f_e_b, f_a_b = self.enhance(pyramid_b[-1], "b")

        if self.config.enable_cif:
            f_fu = self.fusion(f_e_a, f_e_b)  # one shared fused map for both branches
            bottleneck_a = torch.cat([f_e_a, f_fu], dim=1)
            bottleneck_b = torch.cat([f_e_b, f_fu], dim=1)
        else:
            f_fu = None
            bottleneck_a, bottleneck_b = f_e_a, f_e_b

        logits_a = self.decoder_a(pyramid_a, bottleneck_a)
        logits_b = self.decoder_b(pyramid_b, bottleneck_b)
        pred = DualPrediction(
            logits_a=logits_a,
            logits_b=logits_b,
            probs_a=torch.softmax(logits_a, dim=1),
            probs_b=torch.softmax(logits_b, dim=1),
        )
        if return_features:
            features = {
                "pyramid_a": pyramid_a,
                "pyramid_b": pyramid_b,
                "enhanced_a": f_e_a,
                "enhanced_b": f_e_b,
                "attention_out_a": f_a_a,
                "attention_out_b": f_a_b,
                "fused": f_fu,
                "bottleneck_a": bottleneck_a,
                "bottleneck_b": bottleneck_b,
            }
            return pred, features
        return pred


class SingleBranchNet(nn.Module):
    """Plain one-modality U-Net; reference for the disabled-flags architecture."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        config.validate()
        dims = tuple(config.channel_dims)
        self.encoder = Encoder(config.in_channels, dims)
        self.decoder = Decoder(dims, config.n_classes, dims[-1])

    def forward(self, image):
        pyramid = self.encoder(image)
        return self.decoder(pyramid, pyramid[-1])
