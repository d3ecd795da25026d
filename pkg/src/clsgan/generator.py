"""ClsGAN generator: content encoder, attribute encoder, Tr-resnet decoder.

The decoder is a stack of six weighted-residual upconvolution blocks
("Tr blocks"). Each block mixes a resolution-matched copy of its input
(a raw transposed convolution) with a fresh convolution path through
learnable per-channel weights alpha; the third block additionally adds a
projected encoder skip feature weighted by beta:

    f_l = alpha * shortcut(f_{l-1}) + (1 - alpha) * fresh(f_{l-1})
          [+ beta * project(xature_skip)   at the skip block]

Ablation variants replace this blend: ``conv`` keeps only the fresh path
(alpha pinned to 0, no skip), ``conv_res`` pins alpha to 0.5 with no
learnable blend weights and no skip.
"""

from __future__ import annotations

import torch
from torch import nn

from .data import DimensionError

DECODER_VARIANTS = ("tr_resnet", "conv", "conv_res")


class ContractError(ValueError):
    """Raised when a skip feature is supplied to or missing from a block."""


def variant_for_ablation(ablation: str) -> str:
    return {"full": "tr_resnet", "conv": "conv", "conv_res": "conv_res",
            "oricla": "tr_resnet"}[ablation]


def _conv_in_relu(in_ch: int, out_ch: int, kernel: int, stride: int) -> nn.Sequential:
    # halves the spatial size at stride 2, preserves it at stride 1
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, stride, (kernel - stride) // 2),
        nn.InstanceNorm2d(out_ch, affine=True),
        nn.ReLU(inplace=True),
    )


class ContentEncoder(nn.Module):
    """Strided Conv-InstanceNorm-ReLU stack producing the content feature.

    Also returns its second layer's feature map, which the decoder's skip
    block consumes at half resolution.
    """

    def __init__(self, base_channels: int = 64, resolution: int = 128):
        super().__init__()
        b = base_channels
        self.resolution = resolution
        self.stem = _conv_in_relu(3, b, 7, 1)
        self.down1 = _conv_in_relu(b, 2 * b, 4, 2)
        self.down2 = _conv_in_relu(2 * b, 4 * b, 4, 2)
        self.down3 = _conv_in_relu(4 * b, 8 * b, 4, 2)
        self.content_channels = 8 * b
        self.skip_channels = 2 * b

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        _check_image(x, self.resolution)
        h = self.stem(x)
        skip = self.down1(h)
        content = self.down3(self.down2(skip))
        return content, skip


class AttributeEncoder(nn.Module):
    """Convolutional attribute estimator with a sigmoid head of length n."""

    def __init__(self, n_attributes: int, base_channels: int = 64,
                 resolution: int = 128):
        super().__init__()
        b = base_channels
        self.resolution = resolution
        self.body = nn.Sequential(
            _conv_in_relu(3, b, 7, 1),
            _conv_in_relu(b, 2 * b, 4, 2),
            _conv_in_relu(2 * b, 4 * b, 4, 2),
            _conv_in_relu(4 * b, 8 * b, 4, 2),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(8 * b, n_attributes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_image(x, self.resolution)
        h = self.pool(self.body(x)).flatten(1)
        return torch.sigmoid(self.head(h))


class TrBlock(nn.Module):
    """One weighted-residual upconvolution block.

    ``upsample`` blocks double the spatial size on both paths. ``use_skip``
    wires in the encoder feature through a 1x1 projection; callers must
    pass ``skip`` exactly when the block was built with it.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        upsample: bool,
        use_skip: bool = False,
        skip_channels: int | None = None,
        variant: str = "tr_resnet",
    ):
        super().__init__()
        if variant not in DECODER_VARIANTS:
            raise ValueError(f"unknown decoder variant {variant!r}")
        self.variant = variant
        self.upsample = upsample
        self.use_skip = use_skip and variant == "tr_resnet"

        if upsample:
            fresh_conv = nn.ConvTranspose2d(in_channels, out_channels, 4, 2, 1)
        else:
            fresh_conv = nn.Conv2d(in_channels, out_channels, 3, 1, 1)
        self.fresh = nn.Sequential(
            fresh_conv,
            nn.InstanceNorm2d(out_channels, affine=True),
            nn.ReLU(inplace=True),
        )

        if variant == "conv":
            self.shortcut = None
            self.register_buffer("alpha_fixed", torch.zeros(out_channels))
        else:
            if upsample:
                self.shortcut = nn.ConvTranspose2d(
                    in_channels, out_channels, 4, 2, 1, bias=False
                )
            else:
                self.shortcut = nn.ConvTranspose2d(
                    in_channels, out_channels, 3, 1, 1, bias=False
                )
            if variant == "conv_res":
                self.register_buffer(
                    "alpha_fixed", torch.full((out_channels,), 0.5)
                )
            else:
                self.alpha = nn.Parameter(torch.rand(out_channels))

        if self.use_skip:
            if skip_channels is None:
                raise ValueError("skip_channels required when use_skip is set")
            self.skip_proj = nn.Conv2d(skip_channels, out_channels, 1)
            self.beta = nn.Parameter(torch.rand(out_channels))

    @property
    def effective_alpha(self) -> torch.Tensor:
        if hasattr(self, "alpha"):
            return self.alpha
        return self.alpha_fixed

    def forward(
        self, x: torch.Tensor, skip: torch.Tensor | None = None
    ) -> torch.Tensor:
        if skip is not None and not self.use_skip:
            raise ContractError("skip feature supplied to a block without one")
        if skip is None and self.use_skip:
            raise ContractError("skip block called without its skip feature")

        fresh = self.fresh(x)
        if self.shortcut is None:
            out = fresh
        else:
            alpha = self.effective_alpha.view(1, -1, 1, 1)
            out = alpha * self.shortcut(x) + (1.0 - alpha) * fresh
        if self.use_skip:
            out = out + self.beta.view(1, -1, 1, 1) * self.skip_proj(skip)
        return out


class Decoder(nn.Module):
    """Six Tr blocks (x2 upsampling at blocks 1, 3, 5) plus a tanh head.

    The difference label is broadcast over the content feature's spatial
    grid and concatenated channel-wise before the first block; the skip
    feature enters at block 3, whose output resolution matches it.
    """

    SKIP_BLOCK_INDEX = 2  # third block

    def __init__(
        self,
        content_channels: int,
        n_attributes: int,
        skip_channels: int,
        base_channels: int = 64,
        variant: str = "tr_resnet",
    ):
        super().__init__()
        b = base_channels
        self.n_attributes = n_attributes
        self.variant = variant
        widths = [4 * b, 4 * b, 2 * b, 2 * b, b, b]
        ins = [content_channels + n_attributes] + widths[:-1]
        blocks = []
        for i, (ci, co) in enumerate(zip(ins, widths)):
            blocks.append(
                TrBlock(
                    ci,
                    co,
                    upsample=(i % 2 == 0),
                    use_skip=(i == self.SKIP_BLOCK_INDEX),
                    skip_channels=skip_channels,
                    variant=variant,
                )
            )
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(b, 3, 3, 1, 1)

    def forward(
        self,
        content: torch.Tensor,
        diff_label: torch.Tensor,
        skip: torch.Tensor,
    ) -> torch.Tensor:
        if diff_label.ndim == 1:
            diff_label = diff_label.unsqueeze(0).expand(content.shape[0], -1)
        if diff_label.shape != (content.shape[0], self.n_attributes):
            raise DimensionError(
                f"difference label shape {tuple(diff_label.shape)} does not "
                f"match (batch, {self.n_attributes})"
            )
        label_map = diff_label[:, :, None, None].expand(
            -1, -1, content.shape[2], content.shape[3]
        )
        h = torch.cat([content, label_map], dim=1)
        for block in self.blocks:
            h = block(h, skip) if block.use_skip else block(h)
        return torch.tanh(self.head(h))


class ClsGanGenerator(nn.Module):
    """Full generator: edit an image toward a target attribute vector."""

    def __init__(
        self,
        n_attributes: int,
        resolution: int = 128,
        base_channels: int = 64,
        variant: str = "tr_resnet",
    ):
        super().__init__()
        if n_attributes < 1:
            raise ValueError("n_attributes must be at least 1")
        self.n_attributes = n_attributes
        self.resolution = resolution
        self.content_encoder = ContentEncoder(base_channels, resolution)
        self.attribute_encoder = AttributeEncoder(
            n_attributes, base_channels, resolution
        )
        self.decoder = Decoder(
            self.content_encoder.content_channels,
            n_attributes,
            self.content_encoder.skip_channels,
            base_channels,
            variant,
        )

    def encode_content(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.content_encoder(x)

    def encode_attributes(self, x: torch.Tensor) -> torch.Tensor:
        return self.attribute_encoder(x)

    def decode(
        self, content: torch.Tensor, diff_label: torch.Tensor, skip: torch.Tensor
    ) -> torch.Tensor:
        return self.decoder(content, diff_label, skip)

    def forward(self, x: torch.Tensor, target_label: torch.Tensor) -> torch.Tensor:
        """Edit ``x`` toward ``target_label`` (continuous values allowed)."""
        squeeze = x.ndim == 3
        if squeeze:
            x = x.unsqueeze(0)
        content, skip = self.encode_content(x)
        encoded = self.encode_attributes(x)
        target = torch.as_tensor(
            target_label, dtype=x.dtype, device=x.device
        )
        if target.ndim == 1:
            target = target.unsqueeze(0).expand(x.shape[0], -1)
        out = self.decode(content, target - encoded, skip)
        return out.squeeze(0) if squeeze else out

    def generate(self, x: torch.Tensor, target_label: torch.Tensor) -> torch.Tensor:
        return self(x, target_label)


def _check_image(x: torch.Tensor, resolution: int) -> None:
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (resolution, resolution):
        raise DimensionError(
            f"expected (B, 3, {resolution}, {resolution}) input, got "
            f"{tuple(x.shape)}"
        )
