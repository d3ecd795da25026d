"""Attribute-adversarial critic: a Wasserstein critic and an attribute
classifier sharing one convolutional trunk.

The classifier head is (n + 1)-dimensional: its first element predicts
whether the image is real data rather than a generated sample (the
"separability" element) and the remaining n elements predict attributes.
The ``oricla`` ablation drops the separability element and uses a plain
n-dimensional head.
"""

from __future__ import annotations

import torch
from torch import nn

from .data import DimensionError


class AttaClsCritic(nn.Module):
    """Shared trunk with a scalar critic head and a sigmoid classifier head.

    The critic output carries no activation (Wasserstein score). The trunk
    uses no normalization, as required for a gradient-penalty critic.
    """

    def __init__(
        self,
        n_attributes: int,
        resolution: int = 128,
        base_channels: int = 64,
        separability_element: bool = True,
    ):
        super().__init__()
        if n_attributes < 1:
            raise ValueError("n_attributes must be at least 1")
        if resolution % 32 != 0 or resolution < 32:
            raise ValueError("resolution must be a positive multiple of 32")
        self.n_attributes = n_attributes
        self.resolution = resolution
        self.separability_element = separability_element

        b = base_channels
        widths = [b, 2 * b, 4 * b, 8 * b, 16 * b]
        layers: list[nn.Module] = []
        in_ch = 3
        for out_ch in widths:
            layers.append(nn.Conv2d(in_ch, out_ch, 4, 2, 1))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            in_ch = out_ch
        self.trunk = nn.Sequential(*layers)

        final_spatial = resolution // 32
        self.critic_head = nn.Conv2d(in_ch, 1, final_spatial)
        out_dim = n_attributes + 1 if separability_element else n_attributes
        self.classifier_head = nn.Conv2d(in_ch, out_dim, final_spatial)

    @property
    def classifier_dim(self) -> int:
        return self.n_attributes + (1 if self.separability_element else 0)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (critic score (B,), classifier probabilities (B, dim))."""
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (
            self.resolution,
            self.resolution,
        ):
            raise DimensionError(
                f"expected (B, 3, {self.resolution}, {self.resolution}) "
                f"input, got {tuple(x.shape)}"
            )
        h = self.trunk(x)
        score = self.critic_head(h).flatten(1).squeeze(1)
        probs = torch.sigmoid(self.classifier_head(h).flatten(1))
        return score, probs

    def critic_score(self, x: torch.Tensor) -> torch.Tensor:
        return self(x)[0]

    def classify(self, x: torch.Tensor) -> torch.Tensor:
        return self(x)[1]


def make_targets(labels: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Build classifier targets for real and fake images.

    Prepends the separability element: 1 for real images, 0 for fakes; the
    attribute part is the image's label vector in both cases.
    """
    if labels.ndim != 2:
        raise DimensionError(
            f"labels must be (batch, n), got {tuple(labels.shape)}"
        )
    ones = labels.new_ones(labels.shape[0], 1)
    zeros = labels.new_zeros(labels.shape[0], 1)
    t_real = torch.cat([ones, labels], dim=1)
    t_fake = torch.cat([zeros, labels], dim=1)
    return t_real, t_fake
