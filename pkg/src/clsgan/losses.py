"""Training objectives for ClsGAN.

Reduction conventions, used consistently throughout:

- every loss is averaged over the batch;
- L1 terms (reconstruction, attribute continuity) are averaged over
  elements as well, so their scale is independent of image size and
  attribute count;
- classifier terms of the form t^T log C are summed over the vector
  elements (a true dot product) and then batch-averaged.

Classifier probabilities are clamped to [EPS, 1 - EPS] before any log, so
all losses stay finite. Probabilities outside [0, 1] indicate a caller
bug and raise instead of being silently clamped.
"""

from __future__ import annotations

from typing import Callable

import torch

from .config import LossWeights

EPS = 1e-7

# slack for float32 sigmoid outputs that land a hair outside [0, 1]
_RANGE_TOL = 1e-5


def clamp_probabilities(p: torch.Tensor) -> torch.Tensor:
    if p.numel() and (p.min() < -_RANGE_TOL or p.max() > 1.0 + _RANGE_TOL):
        raise ValueError(
            f"probabilities outside [0, 1]: min {float(p.min()):.6g}, "
            f"max {float(p.max()):.6g}"
        )
    return p.clamp(EPS, 1.0 - EPS)


def attribute_continuity_loss(
    labels: torch.Tensor, encoded: torch.Tensor
) -> torch.Tensor:
    """Element-mean L1 between attribute labels and encoder predictions."""
    if labels.shape != encoded.shape:
        raise ValueError(
            f"shape mismatch: {tuple(labels.shape)} vs {tuple(encoded.shape)}"
        )
    return (labels - encoded).abs().mean()


def classifier_data_loss(
    c_real: torch.Tensor,
    t_real: torch.Tensor,
    c_fake_first: torch.Tensor,
    one_sided: bool = False,
) -> torch.Tensor:
    """Log-likelihood objective for the classifier head (larger is better).

    Real images contribute all vector elements; generated images
    contribute only the first (separability) element, with target 0.
    ``one_sided`` keeps only the t log C part of the real-image term; the
    default adds the (1 - t) log(1 - C) completion, without which a
    constant output of 1 would be optimal.
    """
    if c_real.shape != t_real.shape:
        raise ValueError(
            f"shape mismatch: {tuple(c_real.shape)} vs {tuple(t_real.shape)}"
        )
    c_real = clamp_probabilities(c_real)
    c_fake_first = clamp_probabilities(c_fake_first)
    real_term = (t_real * torch.log(c_real)).sum(dim=1)
    if not one_sided:
        real_term = real_term + ((1.0 - t_real) * torch.log(1.0 - c_real)).sum(dim=1)
    fake_term = torch.log(1.0 - c_fake_first)
    return real_term.mean() + fake_term.mean()


def classifier_total_loss(
    loss_c: torch.Tensor, penalty: torch.Tensor
) -> torch.Tensor:
    """Minimization objective for the classifier: negated likelihood plus
    the gradient penalty on its separability output."""
    return -loss_c + penalty


def classifier_generator_loss(
    c_fake: torch.Tensor,
    t_fake: torch.Tensor,
    want_separable: bool = True,
) -> torch.Tensor:
    """Target-attribute log-likelihood of generated images (larger better).

    ``want_separable`` replaces the first target element with 1, pushing
    the generator to also fool the separability output; with it off the
    first element stays 0 and that term vanishes from the dot product.
    """
    if c_fake.shape != t_fake.shape:
        raise ValueError(
            f"shape mismatch: {tuple(c_fake.shape)} vs {tuple(t_fake.shape)}"
        )
    c_fake = clamp_probabilities(c_fake)
    if want_separable:
        t_fake = t_fake.clone()
        t_fake[:, 0] = 1.0
    return (t_fake * torch.log(c_fake)).sum(dim=1).mean()


def gradient_penalty(
    function: Callable[[torch.Tensor], torch.Tensor],
    x_real: torch.Tensor,
    x_fake: torch.Tensor,
    generator: torch.Generator | None = None,
    scale: float = 10.0,
) -> torch.Tensor:
    """Two-sided gradient penalty on line samples between real and fake.

    Each batch element gets its own interpolation coefficient u ~ U(0, 1);
    the gradient norm is taken over all of that sample's elements. Returns
    scale * mean((norm - 1)^2), built with create_graph so it can be
    backpropagated through.
    """
    if x_real.shape != x_fake.shape:
        raise ValueError(
            f"shape mismatch: {tuple(x_real.shape)} vs {tuple(x_fake.shape)}"
        )
    batch = x_real.shape[0]
    if batch == 0:
        raise ValueError("empty batch")
    u = torch.rand(
        (batch,) + (1,) * (x_real.ndim - 1),
        generator=generator,
        dtype=x_real.dtype,
        device=x_real.device,
    )
    x_star = (u * x_real + (1.0 - u) * x_fake).detach().requires_grad_(True)
    scores = function(x_star)
    if scores.shape not in ((batch,), (batch, 1)):
        raise ValueError(
            f"penalized function must return one scalar per sample, got "
            f"shape {tuple(scores.shape)}"
        )
    grads = torch.autograd.grad(
        outputs=scores.sum(),
        inputs=x_star,
        create_graph=True,
    )[0]
    norms = grads.flatten(1).norm(2, dim=1)
    return scale * ((norms - 1.0) ** 2).mean()


def wgan_critic_loss(
    d_real: torch.Tensor, d_fake: torch.Tensor, penalty: torch.Tensor
) -> torch.Tensor:
    """Wasserstein critic objective (to minimize), penalty included."""
    if d_real.numel() == 0 or d_fake.numel() == 0:
        raise ValueError("empty batch")
    return -(d_real.mean() - d_fake.mean()) + penalty


def wgan_generator_score(d_fake: torch.Tensor) -> torch.Tensor:
    """Mean critic score of generated images; the generator maximizes it."""
    if d_fake.numel() == 0:
        raise ValueError("empty batch")
    return d_fake.mean()


def reconstruction_loss(
    x_real: torch.Tensor, x_rec: torch.Tensor
) -> torch.Tensor:
    """Element-mean L1 between an image and its reconstruction."""
    if x_real.shape != x_rec.shape:
        raise ValueError(
            f"shape mismatch: {tuple(x_real.shape)} vs {tuple(x_rec.shape)}"
        )
    return (x_real - x_rec).abs().mean()


def total_dc_loss(
    wgan_loss: torch.Tensor,
    classifier_loss: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Fused critic-and-classifier objective."""
    return weights.lambda0 * wgan_loss + weights.lambda1 * classifier_loss


def total_g_loss(
    generator_score: torch.Tensor,
    classifier_gen_loss: torch.Tensor,
    rec_loss: torch.Tensor,
    attr_loss: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Full generator objective; the two likelihood terms enter negated."""
    return (
        -generator_score
        - weights.lambda2 * classifier_gen_loss
        + weights.lambda3 * rec_loss
        + weights.lambda4 * attr_loss
    )


def original_classifier_loss(
    probs: torch.Tensor, targets: torch.Tensor
) -> torch.Tensor:
    """Plain multi-label cross entropy (to minimize; perfect output gives 0).

    Used by the ``oricla`` ablation in place of the separability-augmented
    classifier losses: element-sum binary cross entropy, batch-mean, the
    same reduction as the dot-product losses it replaces.
    """
    if probs.shape != targets.shape:
        raise ValueError(
            f"shape mismatch: {tuple(probs.shape)} vs {tuple(targets.shape)}"
        )
    probs = clamp_probabilities(probs)
    ll = targets * torch.log(probs) + (1.0 - targets) * torch.log(1.0 - probs)
    return -ll.sum(dim=1).mean()
