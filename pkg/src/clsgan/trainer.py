"""Alternating WGAN-GP training loop for ClsGAN.

Each batch takes one fused critic-and-classifier step (one backward
through lambda0 * L_D + lambda1 * L_Cd over the shared trunk); every
n_critic-th batch additionally takes a generator step. Checkpoints are
written after every epoch and metrics are appended to a JSONL log, one
record per optimizer step.

Determinism contract: model construction is seeded from config.seed,
batch order per epoch comes from a stateless generator keyed on
(seed, epoch), and all stochastic draws inside steps (target labels,
gradient-penalty interpolation) flow through one torch.Generator whose
state is checkpointed. Identical config and seed reproduce the metrics
log exactly on the same hardware; resuming from a checkpoint continues
the same trajectory.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterator

import torch

from . import losses
from .checkpoint import CheckpointData, load_checkpoint, save_checkpoint
from .config import ConfigError, TrainingConfig, config_to_text, parse_config_text
from .critic import AttaClsCritic, make_targets
from .data import iterate_batches, sample_target_labels
from .generator import ClsGanGenerator, variant_for_ablation

METRICS_FILENAME = "metrics.jsonl"
CONFIG_SNAPSHOT_FILENAME = "config.cfg"
CHECKPOINT_DIRNAME = "checkpoints"


class TrainingDivergedError(RuntimeError):
    """Raised when any loss component becomes non-finite."""


def lr_at(epoch: int, config: TrainingConfig) -> float:
    """Constant learning rate for the flat phase, then linear decay to 0."""
    if epoch < config.epochs_flat:
        return config.lr_initial
    total = config.epochs_flat + config.epochs_decay
    remaining = max(0, total - epoch)
    return config.lr_initial * remaining / config.epochs_decay


class Trainer:
    def __init__(
        self,
        config: TrainingConfig,
        images: torch.Tensor,
        labels: torch.Tensor,
        output_dir: str | Path,
    ):
        config.validate()
        if images.ndim != 4 or images.shape[0] == 0:
            raise ConfigError("training set is empty or malformed")
        if labels.shape != (images.shape[0], config.n_attributes):
            raise ConfigError(
                f"labels shape {tuple(labels.shape)} does not match "
                f"{images.shape[0]} images with {config.n_attributes} attributes"
            )
        if images.shape[2] != config.resolution:
            raise ConfigError(
                f"images are {images.shape[2]}px but config.resolution is "
                f"{config.resolution}"
            )
        self.config = config
        self.images = images
        self.labels = labels
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        (self.output_dir / CHECKPOINT_DIRNAME).mkdir(exist_ok=True)
        self.metrics_path = self.output_dir / METRICS_FILENAME
        snapshot = self.output_dir / CONFIG_SNAPSHOT_FILENAME
        snapshot.write_text(config_to_text(config))

        torch.manual_seed(config.seed)
        variant = variant_for_ablation(config.ablation)
        self.generator = ClsGanGenerator(
            config.n_attributes,
            config.resolution,
            config.base_channels,
            variant,
        )
        self.critic = AttaClsCritic(
            config.n_attributes,
            config.resolution,
            config.base_channels,
            separability_element=(config.ablation != "oricla"),
        )
        self.opt_g = torch.optim.Adam(
            self.generator.parameters(),
            lr=config.lr_initial,
            betas=(0.5, 0.999),
        )
        self.opt_dc = torch.optim.Adam(
            self.critic.parameters(),
            lr=config.lr_initial,
            betas=(0.5, 0.999),
        )
        # one stream for target sampling and penalty draws; checkpointed
        self.rng = torch.Generator()
        self.rng.manual_seed(config.seed + 1)
        self.epoch = 0
        self.global_step = 0
        self._dc_steps_since_g = 0

    # ------------------------------------------------------------------
    # steps

    def train_step_dc(
        self, x_real: torch.Tensor, labels: torch.Tensor
    ) -> dict[str, float]:
        cfg = self.config
        w = cfg.loss_weights
        target_labels = sample_target_labels(labels, self.rng)
        with torch.no_grad():
            x_fake = self.generator.generate(x_real, target_labels)
        x_fake = x_fake.detach()

        d_real, c_real = self.critic(x_real)
        d_fake, c_fake = self.critic(x_fake)
        gp_d = losses.gradient_penalty(
            lambda x: self.critic(x)[0], x_real, x_fake, self.rng, w.gp_critic
        )
        loss_d = losses.wgan_critic_loss(d_real, d_fake, gp_d)

        if cfg.ablation == "oricla":
            gp_c = torch.zeros(())
            loss_cd = losses.original_classifier_loss(c_real, labels)
        else:
            t_real, _ = make_targets(labels)
            loss_c = losses.classifier_data_loss(
                c_real,
                t_real,
                c_fake[:, 0],
                one_sided=cfg.one_sided_classifier_loss,
            )
            gp_c = losses.gradient_penalty(
                lambda x: self.critic(x)[1][:, 0],
                x_real,
                x_fake,
                self.rng,
                w.gp_classifier,
            )
            loss_cd = losses.classifier_total_loss(loss_c, gp_c)

        total = losses.total_dc_loss(loss_d, loss_cd, w)
        metrics = {
            "L_D": float(loss_d.detach()),
            "L_Cd": float(loss_cd.detach()),
            "gp_D": float(gp_d.detach()),
            "gp_C": float(gp_c.detach()),
            "L_CD": float(total.detach()),
        }
        self._check_finite(metrics, "dc")
        self.opt_dc.zero_grad(set_to_none=True)
        total.backward()
        self.opt_dc.step()
        return metrics

    def train_step_g(
        self, x_real: torch.Tensor, labels: torch.Tensor
    ) -> dict[str, float]:
        cfg = self.config
        w = cfg.loss_weights
        target_labels = sample_target_labels(labels, self.rng)

        content, skip = self.generator.encode_content(x_real)
        encoded = self.generator.encode_attributes(x_real)
        x_fake = self.generator.decode(content, target_labels - encoded, skip)
        x_rec = self.generator.decode(content, labels - encoded, skip)

        d_fake, c_fake = self.critic(x_fake)
        loss_g = losses.wgan_generator_score(d_fake)
        if cfg.ablation == "oricla":
            loss_cg = -losses.original_classifier_loss(c_fake, target_labels)
        else:
            _, t_fake = make_targets(target_labels)
            loss_cg = losses.classifier_generator_loss(
                c_fake, t_fake, want_separable=cfg.gen_wants_separable
            )
        loss_rec = losses.reconstruction_loss(x_real, x_rec)
        loss_a = losses.attribute_continuity_loss(labels, encoded)
        total = losses.total_g_loss(loss_g, loss_cg, loss_rec, loss_a, w)

        metrics = {
            "L_G": float(loss_g.detach()),
            "L_Cg": float(loss_cg.detach()),
            "L_rec": float(loss_rec.detach()),
            "L_a": float(loss_a.detach()),
            "L_all": float(total.detach()),
        }
        self._check_finite(metrics, "g")
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        self.opt_g.step()
        return metrics

    def _check_finite(self, metrics: dict[str, float], kind: str) -> None:
        bad = {k: v for k, v in metrics.items() if not math.isfinite(v)}
        if bad:
            raise TrainingDivergedError(
                f"non-finite {kind} loss at epoch {self.epoch} step "
                f"{self.global_step}: {bad}; all metrics: {metrics}"
            )

    # ------------------------------------------------------------------
    # epoch loop

    def _epoch_batches(
        self, epoch: int
    ) -> Iterator[tuple[torch.Tensor, torch.Tensor]]:
        order_rng = torch.Generator()
        order_rng.manual_seed(self.config.seed * 1_000_003 + epoch)
        order = torch.randperm(self.images.shape[0], generator=order_rng)
        return iterate_batches(
            self.images, self.labels, self.config.batch_size, order
        )

    def _set_lr(self, lr: float) -> None:
        for opt in (self.opt_g, self.opt_dc):
            for group in opt.param_groups:
                group["lr"] = lr

    def _log(self, kind: str, lr: float, metrics: dict[str, float]) -> None:
        record = {
            "step": self.global_step,
            "epoch": self.epoch,
            "kind": kind,
            "lr": lr,
        }
        record.update(metrics)
        with self.metrics_path.open("a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def train_epoch(self) -> None:
        lr = lr_at(self.epoch, self.config)
        self._set_lr(lr)
        for x_batch, l_batch in self._epoch_batches(self.epoch):
            dc_metrics = self.train_step_dc(x_batch, l_batch)
            self._log("dc", lr, dc_metrics)
            self.global_step += 1
            self._dc_steps_since_g += 1
            if self._dc_steps_since_g >= self.config.n_critic:
                g_metrics = self.train_step_g(x_batch, l_batch)
                self._log("g", lr, g_metrics)
                self.global_step += 1
                self._dc_steps_since_g = 0
        self.epoch += 1
        self.save()

    def train(self) -> None:
        while self.epoch < self.config.total_epochs:
            self.train_epoch()

    # ------------------------------------------------------------------
    # checkpointing

    def checkpoint_path(self, epoch: int | None = None) -> Path:
        epoch = self.epoch if epoch is None else epoch
        return (
            self.output_dir
            / CHECKPOINT_DIRNAME
            / f"epoch_{epoch:04d}.ckpt"
        )

    def save(self, path: str | Path | None = None) -> Path:
        path = Path(path) if path is not None else self.checkpoint_path()
        tensors: dict[str, torch.Tensor] = {}
        for key, value in self.generator.state_dict().items():
            tensors[f"generator.{key}"] = value
        for key, value in self.critic.state_dict().items():
            tensors[f"critic.{key}"] = value
        groups: dict[str, list] = {}
        for prefix, opt in (("opt_g", self.opt_g), ("opt_dc", self.opt_dc)):
            sd = opt.state_dict()
            groups[prefix] = sd["param_groups"]
            for idx, slots in sd["state"].items():
                for slot, value in slots.items():
                    tensors[f"{prefix}.{idx}.{slot}"] = value
        tensors["rng_state"] = self.rng.get_state()
        metadata = {
            "epoch": self.epoch,
            "global_step": self.global_step,
            "dc_steps_since_g": self._dc_steps_since_g,
            "opt_g_groups": groups["opt_g"],
            "opt_dc_groups": groups["opt_dc"],
        }
        save_checkpoint(path, config_to_text(self.config), tensors, metadata)
        return path

    def _restore(self, data: CheckpointData) -> None:
        gen_state = {}
        critic_state = {}
        opt_states: dict[str, dict[int, dict[str, torch.Tensor]]] = {
            "opt_g": {},
            "opt_dc": {},
        }
        for name, tensor in data.tensors.items():
            if name.startswith("generator."):
                gen_state[name[len("generator."):]] = tensor
            elif name.startswith("critic."):
                critic_state[name[len("critic."):]] = tensor
            elif name.startswith(("opt_g.", "opt_dc.")):
                prefix, rest = name.split(".", 1)
                idx_str, slot = rest.split(".", 1)
                opt_states[prefix].setdefault(int(idx_str), {})[slot] = tensor
        self.generator.load_state_dict(gen_state)
        self.critic.load_state_dict(critic_state)
        for prefix, opt in (("opt_g", self.opt_g), ("opt_dc", self.opt_dc)):
            opt.load_state_dict(
                {
                    "state": opt_states[prefix],
                    "param_groups": data.metadata[f"{prefix}_groups"],
                }
            )
        self.rng.set_state(data.tensors["rng_state"].to(torch.uint8))
        self.epoch = int(data.metadata["epoch"])
        self.global_step = int(data.metadata["global_step"])
        self._dc_steps_since_g = int(data.metadata["dc_steps_since_g"])

    @classmethod
    def from_checkpoint(
        cls,
        path: str | Path,
        images: torch.Tensor,
        labels: torch.Tensor,
        output_dir: str | Path,
    ) -> "Trainer":
        data = load_checkpoint(path)
        config = parse_config_text(data.config_text)
        trainer = cls(config, images, labels, output_dir)
        trainer._restore(data)
        return trainer


def load_generator(path: str | Path) -> tuple[ClsGanGenerator, TrainingConfig]:
    """Build a generator from a checkpoint, for editing and evaluation."""
    data = load_checkpoint(path)
    config = parse_config_text(data.config_text)
    generator = ClsGanGenerator(
        config.n_attributes,
        config.resolution,
        config.base_channels,
        variant_for_ablation(config.ablation),
    )
    state = {
        name[len("generator."):]: tensor
        for name, tensor in data.tensors.items()
        if name.startswith("generator.")
    }
    generator.load_state_dict(state)
    generator.eval()
    return generator, config


def train(
    config: TrainingConfig,
    images: torch.Tensor,
    labels: torch.Tensor,
    output_dir: str | Path,
) -> Trainer:
    trainer = Trainer(config, images, labels, output_dir)
    trainer.train()
    return trainer
