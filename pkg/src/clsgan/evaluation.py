"""Quantitative evaluation: SSIM, FID, attribute-transfer accuracy, and
attribute-interpolation grids.

SSIM uses the reference constants (11x11 Gaussian window, sigma 1.5,
C1 = 0.01^2, C2 = 0.03^2) computed on images rescaled from [-1, 1] to
[0, 1], with float64 internals. FID takes the matrix square root by
symmetric eigendecomposition with negative eigenvalues clamped to zero.

The FID feature extractor is pluggable: a deterministic random-projection
extractor keeps tests self-contained, and an inception wrapper loads
user-supplied torchvision weights for numbers comparable to published
results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import tensor_to_image_array

DEFAULT_INTERPOLATION_VALUES = tuple(round(0.2 * i, 1) for i in range(9))

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


# ---------------------------------------------------------------------------
# SSIM


def _gaussian_window(size: int, sigma: float) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    g = g / g.sum()
    window = g[:, None] @ g[None, :]
    return window


def ssim(x: torch.Tensor, y: torch.Tensor) -> float:
    """Mean structural similarity between image tensors in [-1, 1].

    Accepts (C, H, W) or (B, C, H, W); returns the mean over windows,
    channels, and batch. Valid convolution only, so inputs must be at
    least 11 pixels on each side.
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    if x.ndim == 3:
        x = x.unsqueeze(0)
        y = y.unsqueeze(0)
    if x.ndim != 4:
        raise ValueError(f"expected 3 or 4 dims, got {x.ndim}")
    if min(x.shape[2], x.shape[3]) < SSIM_WINDOW:
        raise ValueError(
            f"images must be at least {SSIM_WINDOW}px per side for SSIM"
        )

    x = (x.double() + 1.0) / 2.0
    y = (y.double() + 1.0) / 2.0
    channels = x.shape[1]
    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    kernel = window.expand(channels, 1, SSIM_WINDOW, SSIM_WINDOW)

    def filt(t: torch.Tensor) -> torch.Tensor:
        return F.conv2d(t, kernel, groups=channels)

    mu_x = filt(x)
    mu_y = filt(y)
    sigma_x = filt(x * x) - mu_x * mu_x
    sigma_y = filt(y * y) - mu_y * mu_y
    sigma_xy = filt(x * y) - mu_x * mu_y

    numerator = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * sigma_xy + SSIM_C2)
    denominator = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (
        sigma_x + sigma_y + SSIM_C2
    )
    return float((numerator / denominator).mean())


# ---------------------------------------------------------------------------
# FID


@dataclass
class FeatureStatistics:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.covariance = np.atleast_2d(
            np.asarray(self.covariance, dtype=np.float64)
        )
        d = self.mean.shape[0]
        if self.mean.ndim != 1 or self.covariance.shape != (d, d):
            raise ValueError(
                f"inconsistent statistics: mean {self.mean.shape}, "
                f"covariance {self.covariance.shape}"
            )
        asym = np.abs(self.covariance - self.covariance.T).max(initial=0.0)
        if asym > 1e-6 * max(1.0, np.abs(self.covariance).max(initial=0.0)):
            raise ValueError(f"covariance not symmetric (max deviation {asym})")
        self.covariance = (self.covariance + self.covariance.T) / 2.0


def fid(stats_a: FeatureStatistics, stats_b: FeatureStatistics) -> float:
    """Frechet distance between two Gaussians given by their statistics."""
    if stats_a.mean.shape != stats_b.mean.shape:
        raise ValueError("feature dimensions differ")
    diff = stats_a.mean - stats_b.mean
    mean_term = float(diff @ diff)

    vals_a, vecs_a = np.linalg.eigh(stats_a.covariance)
    vals_a = np.clip(vals_a, 0.0, None)
    sqrt_a = (vecs_a * np.sqrt(vals_a)) @ vecs_a.T
    inner = sqrt_a @ stats_b.covariance @ sqrt_a
    inner = (inner + inner.T) / 2.0
    vals = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    trace_sqrt = float(np.sqrt(vals).sum())

    value = (
        mean_term
        + float(np.trace(stats_a.covariance))
        + float(np.trace(stats_b.covariance))
        - 2.0 * trace_sqrt
    )
    return max(value, 0.0)


def extract_features(
    images: torch.Tensor,
    extractor: Callable[[torch.Tensor], torch.Tensor],
    batch_size: int = 64,
) -> FeatureStatistics:
    """Run the extractor over an image batch and fit Gaussian statistics."""
    if images.ndim != 4:
        raise ValueError(f"expected (N, C, H, W), got {tuple(images.shape)}")
    if images.shape[0] < 2:
        raise ValueError("need at least 2 images for covariance")
    chunks = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            feats = extractor(images[start : start + batch_size])
            chunks.append(np.asarray(feats.detach().cpu(), dtype=np.float64))
    features = np.concatenate(chunks, axis=0)
    mean = features.mean(axis=0)
    covariance = np.atleast_2d(np.cov(features, rowvar=False, ddof=1))
    return FeatureStatistics(mean=mean, covariance=covariance)


class RandomProjectionExtractor:
    """Seeded random projection with a tanh nonlinearity.

    A stand-in feature extractor for self-contained FID computation; the
    projection is fixed by (seed, input size), so identical images always
    map to identical features.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._weight: torch.Tensor | None = None
        self._input_numel: int | None = None

    def _build(self, numel: int) -> None:
        rng = torch.Generator()
        rng.manual_seed(self.seed)
        self._weight = torch.randn(
            numel, self.dim, generator=rng, dtype=torch.float64
        ) / math.sqrt(numel)
        self._input_numel = numel

    def __call__(self, images: torch.Tensor) -> torch.Tensor:
        flat = images.reshape(images.shape[0], -1).double()
        if self._weight is None or flat.shape[1] != self._input_numel:
            self._build(flat.shape[1])
        return torch.tanh(flat @ self._weight)


class InceptionFeatureExtractor:
    """Pool features from a torchvision inception_v3 with user weights.

    ``weights_path`` must hold an inception_v3 state dict; nothing is
    downloaded. Inputs in [-1, 1] are resized to 299x299 and normalized
    with the ImageNet statistics the network was trained with.
    """

    _MEAN = (0.485, 0.456, 0.406)
    _STD = (0.229, 0.224, 0.225)

    def __init__(self, weights_path: str | Path):
        from torchvision import models

        network = models.inception_v3(weights=None, init_weights=False)
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        network.load_state_dict(state)
        network.fc = nn.Identity()
        network.eval()
        self.network = network

    def __call__(self, images: torch.Tensor) -> torch.Tensor:
        x = (images + 1.0) / 2.0
        x = F.interpolate(
            x, size=(299, 299), mode="bilinear", align_corners=False
        )
        mean = x.new_tensor(self._MEAN).view(1, 3, 1, 1)
        std = x.new_tensor(self._STD).view(1, 3, 1, 1)
        with torch.no_grad():
            return self.network((x - mean) / std)


# ---------------------------------------------------------------------------
# evaluation classifier


class EvalClassifierNet(nn.Module):
    def __init__(self, n_attributes: int, width: int = 32):
        super().__init__()
        w = width
        self.features = nn.Sequential(
            nn.Conv2d(3, w, 4, 2, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(w, 2 * w, 4, 2, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * w, 4 * w, 4, 2, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(4 * w, 4 * w, 4, 2, 1),
            nn.ReLU(inplace=True),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(4 * w, n_attributes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.pool(self.features(x)).flatten(1))


@dataclass
class EvalClassifier:
    """Multi-label attribute classifier trained on real images only."""

    network: EvalClassifierNet
    threshold: float = 0.5

    def predict(self, images: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
        """Hard 0/1 predictions, shape (N, n)."""
        self.network.eval()
        outputs = []
        with torch.no_grad():
            for start in range(0, images.shape[0], batch_size):
                logits = self.network(images[start : start + batch_size])
                outputs.append(torch.sigmoid(logits) >= self.threshold)
        return torch.cat(outputs).float()

    def accuracy(
        self, images: torch.Tensor, labels: torch.Tensor
    ) -> torch.Tensor:
        """Per-attribute accuracy vector."""
        preds = self.predict(images)
        return (preds == labels).float().mean(dim=0)


def train_eval_classifier(
    train_images: torch.Tensor,
    train_labels: torch.Tensor,
    test_images: torch.Tensor,
    test_labels: torch.Tensor,
    epochs: int = 30,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    width: int = 32,
) -> tuple[EvalClassifier, dict]:
    """Train the evaluation classifier and measure its test accuracy."""
    torch.manual_seed(seed)
    n = train_labels.shape[1]
    network = EvalClassifierNet(n, width)
    optimizer = torch.optim.Adam(network.parameters(), lr=lr)
    criterion = nn.BCEWithLogitsLoss()
    order_rng = torch.Generator()
    order_rng.manual_seed(seed)

    network.train()
    count = train_images.shape[0]
    for _ in range(epochs):
        order = torch.randperm(count, generator=order_rng)
        for start in range(0, count, batch_size):
            idx = order[start : start + batch_size]
            optimizer.zero_grad(set_to_none=True)
            loss = criterion(network(train_images[idx]), train_labels[idx])
            loss.backward()
            optimizer.step()

    classifier = EvalClassifier(network=network)
    per_attribute = classifier.accuracy(test_images, test_labels)
    report = {
        "per_attribute_accuracy": [float(a) for a in per_attribute],
        "average_accuracy": float(per_attribute.mean()),
    }
    return classifier, report


# ---------------------------------------------------------------------------
# transfer accuracy, reconstruction, interpolation


def generate_batched(
    generator: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    images: torch.Tensor,
    targets: torch.Tensor,
    batch_size: int = 16,
) -> torch.Tensor:
    outputs = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            outputs.append(
                generator(
                    images[start : start + batch_size],
                    targets[start : start + batch_size],
                )
            )
    return torch.cat(outputs)


def transfer_accuracy(
    generator: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    classifier: EvalClassifier,
    images: torch.Tensor,
    labels: torch.Tensor,
    batch_size: int = 16,
) -> torch.Tensor:
    """Per-attribute success rate of single-attribute flips.

    For each attribute, every test image is edited with that attribute
    inverted (all others kept at the source label) and the edit counts as
    a success when the evaluation classifier reads back the flipped value.
    """
    n = labels.shape[1]
    rates = torch.zeros(n)
    for i in range(n):
        targets = labels.clone()
        targets[:, i] = 1.0 - targets[:, i]
        edited = generate_batched(generator, images, targets, batch_size)
        preds = classifier.predict(edited)
        rates[i] = (preds[:, i] == targets[:, i]).float().mean()
    return rates


def reconstruction_metrics(
    generator: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    images: torch.Tensor,
    labels: torch.Tensor,
    batch_size: int = 16,
) -> dict:
    """Element-mean L1 and mean SSIM between images and reconstructions."""
    recon = generate_batched(generator, images, labels, batch_size)
    l1 = float((images - recon).abs().mean())
    scores = [ssim(images[i], recon[i]) for i in range(images.shape[0])]
    return {"recon_l1": l1, "ssim_mean": float(np.mean(scores))}


def attribute_encoder_error(
    generator, images: torch.Tensor, labels: torch.Tensor, batch_size: int = 16
) -> float:
    """Held-out element-mean L1 between labels and encoded attributes."""
    errors = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            encoded = generator.encode_attributes(images[start : start + batch_size])
            errors.append((labels[start : start + batch_size] - encoded).abs())
    return float(torch.cat(errors).mean())


def flip_assignments(labels: torch.Tensor) -> torch.Tensor:
    """Deterministic edit targets: image i flips attribute i mod n."""
    targets = labels.clone()
    n = labels.shape[1]
    for i in range(labels.shape[0]):
        j = i % n
        targets[i, j] = 1.0 - targets[i, j]
    return targets


def evaluate_model(
    generator,
    images: torch.Tensor,
    labels: torch.Tensor,
    extractor: Callable[[torch.Tensor], torch.Tensor] | None = None,
    classifier: EvalClassifier | None = None,
    batch_size: int = 16,
) -> dict:
    """Full evaluation pass; FID and accuracy are included when their
    dependencies (extractor, classifier) are supplied."""
    report = reconstruction_metrics(generator, images, labels, batch_size)
    report["attribute_l1"] = attribute_encoder_error(
        generator, images, labels, batch_size
    )
    if extractor is not None:
        edited = generate_batched(
            generator, images, flip_assignments(labels), batch_size
        )
        stats_real = extract_features(images, extractor)
        stats_fake = extract_features(edited, extractor)
        report["fid"] = fid(stats_real, stats_fake)
    if classifier is not None:
        rates = transfer_accuracy(
            generator, classifier, images, labels, batch_size
        )
        report["per_attribute_accuracy"] = [float(r) for r in rates]
        report["average_accuracy"] = float(rates.mean())
    return report


def interpolation_grid(
    generator,
    image: torch.Tensor,
    attribute_index: int,
    values: Sequence[float] | None = None,
) -> torch.Tensor:
    """Sweep one attribute through ``values`` and tile results horizontally.

    All other attributes stay at their encoded values, so the sweep
    isolates one factor; values outside [0, 1] are allowed.
    """
    if image.ndim != 3:
        raise ValueError(f"expected a single (C, H, W) image, got {image.ndim} dims")
    values = DEFAULT_INTERPOLATION_VALUES if values is None else tuple(values)
    if not values:
        raise ValueError("need at least one interpolation value")
    with torch.no_grad():
        base = generator.encode_attributes(image.unsqueeze(0))[0]
        if not 0 <= attribute_index < base.shape[0]:
            raise ValueError(
                f"attribute index {attribute_index} out of range "
                f"for {base.shape[0]} attributes"
            )
        columns = []
        for value in values:
            target = base.clone()
            target[attribute_index] = value
            columns.append(generator.generate(image, target))
    return torch.cat(columns, dim=2)


def save_image_grid(path: str | Path, grid: torch.Tensor) -> None:
    from PIL import Image

    Image.fromarray(tensor_to_image_array(grid)).save(path)
