"""Interleaved training of critic, reconstructor and generator.

Each iteration performs one critic step and one reconstructor step; every
``n_gen``-th iteration (0-based, so iteration 0 included) also performs one
generator step. Before iteration ``th_disc`` the generator consumes the real
batch; from ``th_disc`` on it consumes the reconstructor's composed output.
The critic's fake inputs always come from the generator, fed whatever the
generator is consuming at that phase. Three Adam optimizers run on a shared
learning-rate schedule: constant for ``constant_epochs`` epochs, then a linear
ramp to zero over ``decay_epochs`` epochs, floored at ``lr_floor``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Callable

import torch

from . import losses
from .data import Batcher, DatasetIndex
from .errors import ConfigError, NumericalError, TrainingAborted
from .losses import LossReport, LossWeights
from .masking import apply_mask, centered_mask, compose_modified, extract_patch
from .networks import (ModelBundle, NetConfig, init_bundle, load_checkpoint,
                       restore_bundle, save_checkpoint)


@dataclass
class TrainConfig:
    image_size: int = 128
    patch_size: int = 52
    n_iter: int = 200_000
    th_disc: int | None = None          # defaults to n_iter // 4
    batch_size: int = 16
    n_gen: int = 5
    lr_rec: float = 1e-4
    lr_gen: float = 1e-4
    lr_disc: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    constant_epochs: int = 10
    decay_epochs: int = 10
    lr_floor: float = 1e-6
    seed: int = 0
    ablation_bypass_reconstructor: bool = False
    checkpoint_every: int = 0           # 0: only the final checkpoint
    base_channels: int = 64
    n_res_blocks: int = 6
    single_thread: bool = False         # bitwise-reproducible mode

    def __post_init__(self):
        if self.th_disc is None:
            self.th_disc = self.n_iter // 4
        if self.n_gen < 1:
            raise ConfigError(f"n_gen must be >= 1, got {self.n_gen}")
        if self.th_disc > self.n_iter:
            raise ConfigError(f"th_disc {self.th_disc} exceeds n_iter {self.n_iter}")
        if min(self.lr_rec, self.lr_gen, self.lr_disc) <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    def net_config(self, n_attributes: int) -> NetConfig:
        return NetConfig(self.image_size, self.patch_size, n_attributes,
                         self.base_channels, self.n_res_blocks)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        return TrainConfig(**d)


@dataclass
class TrainState:
    iteration: int
    bundle: ModelBundle
    optimizers: dict
    rng: torch.Generator
    batcher: Batcher
    updates: dict
    loss_history: list
    last_checkpoint: str | None = None
    steps_per_epoch: int = 1
    last_gen: dict = field(default_factory=lambda: {"cycle": 0.0, "total_gen": 0.0})


def lr_at(iteration: int, cfg: TrainConfig, steps_per_epoch: int,
          base_lr: float | None = None) -> float:
    """Schedule: constant, then a linear ramp to zero, floored at lr_floor."""
    base = cfg.lr_rec if base_lr is None else base_lr
    hold = cfg.constant_epochs * steps_per_epoch
    ramp = cfg.decay_epochs * steps_per_epoch
    if iteration < hold:
        lr = base
    elif ramp > 0 and iteration < hold + ramp:
        lr = base * (1.0 - (iteration - hold) / ramp)
    else:
        lr = 0.0
    return max(lr, cfg.lr_floor)


def _set_requires_grad(net: torch.nn.Module, flag: bool):
    for p in net.parameters():
        p.requires_grad_(flag)


def _make_optimizers(bundle: ModelBundle, cfg: TrainConfig) -> dict:
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    return {
        "R": torch.optim.Adam(bundle.reconstructor.parameters(), lr=cfg.lr_rec, betas=betas),
        "G": torch.optim.Adam(bundle.generator.parameters(), lr=cfg.lr_gen, betas=betas),
        "D": torch.optim.Adam(bundle.discriminator.parameters(), lr=cfg.lr_disc, betas=betas),
    }


def _checkpoint_extra(cfg: TrainConfig, state: TrainState, attributes: list[str]) -> dict:
    return {
        "train_config": cfg.to_dict(),
        "optimizers": {k: opt.state_dict() for k, opt in state.optimizers.items()},
        "torch_rng": state.rng.get_state(),
        "batcher": state.batcher.state(),
        "updates": dict(state.updates),
        "last_gen": dict(state.last_gen),
        "attributes": list(attributes),
    }


def write_checkpoint(path: str, cfg: TrainConfig, state: TrainState,
                     attributes: list[str]):
    """Persist the full training state; ``train(resume_from=path)`` restores it."""
    save_checkpoint(path, state.bundle, state.iteration,
                    extra=_checkpoint_extra(cfg, state, attributes))
    state.last_checkpoint = path


def train(cfg: TrainConfig, train_index: DatasetIndex, out_dir: str | None = None,
          hook: Callable[[dict], None] | None = None,
          resume_from: str | None = None) -> TrainState:
    """Run the training loop; returns the final TrainState.

    When ``out_dir`` is given, a JSON-lines loss log and checkpoints are
    written there. ``hook`` receives one event dict per iteration with the
    loss report, the generator-input kind and update counters. A non-finite
    loss aborts with a pointer to the last good checkpoint.
    """
    if len(train_index) == 0:
        raise ConfigError("training index is empty")
    if cfg.single_thread:
        torch.set_num_threads(1)

    n_attr = len(train_index.selected_attributes)
    rng = torch.Generator()
    batcher = Batcher(train_index, cfg.batch_size, cfg.image_size, seed=cfg.seed)
    start_iter = 0
    updates = {"D": 0, "R": 0, "G": 0}
    last_gen = {"cycle": 0.0, "total_gen": 0.0}

    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        bundle, start_iter = restore_bundle(payload)
        extra = payload["extra"]
        optimizers = _make_optimizers(bundle, cfg)
        for k, opt in optimizers.items():
            opt.load_state_dict(extra["optimizers"][k])
        rng.set_state(extra["torch_rng"])
        batcher.restore(extra["batcher"])
        updates = dict(extra["updates"])
        last_gen = dict(extra.get("last_gen", last_gen))
    else:
        rng.manual_seed(cfg.seed)
        bundle = init_bundle(cfg.net_config(n_attr), cfg.seed)
        optimizers = _make_optimizers(bundle, cfg)

    steps_per_epoch = max(1, math.ceil(len(train_index) / cfg.batch_size))
    state = TrainState(iteration=start_iter, bundle=bundle, optimizers=optimizers,
                       rng=rng, batcher=batcher, updates=updates, loss_history=[],
                       steps_per_epoch=steps_per_epoch, last_gen=last_gen)

    log_fh = csv_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        mode = "a" if resume_from else "w"
        log_fh = open(os.path.join(out_dir, "loss_log.jsonl"), mode, encoding="utf-8")
        csv_path = os.path.join(out_dir, "loss_log.csv")
        fresh_csv = mode == "w" or not os.path.exists(csv_path)
        csv_fh = open(csv_path, mode, encoding="utf-8")
        if fresh_csv:
            csv_fh.write(LossReport.csv_header() + "\n")

    m = centered_mask(cfg.image_size, cfg.patch_size)
    w = cfg.weights
    rec, gen, disc = bundle.reconstructor, bundle.generator, bundle.discriminator
    bundle.train()

    def abort(iteration: int):
        raise TrainingAborted(iteration, state.last_checkpoint)

    try:
        for i in range(start_iter, cfg.n_iter):
            for name, base in (("R", cfg.lr_rec), ("G", cfg.lr_gen), ("D", cfg.lr_disc)):
                lr = lr_at(i, cfg, steps_per_epoch, base)
                for group in optimizers[name].param_groups:
                    group["lr"] = lr

            x, c_org = batcher.next_batch()
            x_bar = apply_mask(x, m)
            if n_attr > 0:
                c_tgt = c_org[torch.randperm(cfg.batch_size, generator=rng)]
            else:
                c_tgt = c_org

            if cfg.ablation_bypass_reconstructor:
                g_in, g_kind = x_bar, "masked"
            elif i < cfg.th_disc:
                g_in, g_kind = x, "real"
            else:
                with torch.no_grad():
                    g_in = compose_modified(x_bar, extract_patch(rec(x_bar), m), m)
                g_kind = "modified"
            if not cfg.ablation_bypass_reconstructor:
                assert (i < cfg.th_disc) == (g_in is x), "switchover contract violated"

            # critic step
            _set_requires_grad(disc, True)
            with torch.no_grad():
                fake = gen(g_in, c_tgt)
            adv_g_real, adv_p_real, logits_real = disc(x, m)
            adv_g_fake, adv_p_fake, _ = disc(fake, m)
            critic_g = losses.critic_term(adv_g_real, adv_g_fake)
            critic_p = losses.critic_term(adv_p_real, adv_p_fake)
            try:
                gp_g = losses.gradient_penalty(disc.global_score, x, fake, rng)
                gp_p = losses.gradient_penalty(disc.patch_score, extract_patch(x, m),
                                               extract_patch(fake, m), rng)
            except NumericalError:
                abort(i)
            class_r = losses.classification_loss(logits_real, c_org)
            l_disc = losses.total_disc(critic_g, critic_p, gp_g, gp_p, class_r, w)
            if not torch.isfinite(l_disc):
                abort(i)
            optimizers["D"].zero_grad(set_to_none=True)
            l_disc.backward()
            optimizers["D"].step()
            updates["D"] += 1

            # reconstructor step; critic params frozen, gradients flow through it
            _set_requires_grad(disc, False)
            restored = rec(x_bar)
            x_hat = compose_modified(x_bar, extract_patch(restored, m), m)
            ae_ct, ae_p = losses.ae_terms(x_bar, restored, x, m)
            adv_g_hat, adv_p_hat, logits_hat = disc(x_hat, m)
            adv_rec = losses.adversarial_loss(adv_g_hat, adv_p_hat)
            class_f = losses.classification_loss(logits_hat, c_org)
            l_rec = losses.total_rec(ae_ct + w.lambda_p * ae_p, adv_rec, class_f, w)
            if not torch.isfinite(l_rec):
                abort(i)
            optimizers["R"].zero_grad(set_to_none=True)
            l_rec.backward()
            optimizers["R"].step()
            updates["R"] += 1

            # generator step on the n_gen cadence
            g_updated = i % cfg.n_gen == 0
            if g_updated:
                x_fwd = gen(g_in, c_tgt)
                x_back = gen(x_fwd, c_org)
                adv_g_gen, adv_p_gen, logits_gen = disc(x_fwd, m)
                adv_gen = losses.adversarial_loss(adv_g_gen, adv_p_gen)
                class_f_gen = losses.classification_loss(logits_gen, c_tgt)
                cyc = losses.loss_cycle(g_in, x_back)
                l_gen = losses.total_gen(adv_gen, class_f_gen, cyc, w)
                if not torch.isfinite(l_gen):
                    abort(i)
                optimizers["G"].zero_grad(set_to_none=True)
                l_gen.backward()
                optimizers["G"].step()
                updates["G"] += 1
                state.last_gen = {"cycle": cyc.item(), "total_gen": l_gen.item()}

            report = LossReport(
                iteration=i,
                ae_contour=ae_ct.item(), ae_patch=ae_p.item(),
                adv_g=critic_g.item(), adv_p=critic_p.item(),
                gp_g=gp_g.item(), gp_p=gp_p.item(),
                class_f=class_f.item(), class_r=class_r.item(),
                cycle=state.last_gen["cycle"],
                total_rec=l_rec.item(), total_gen=state.last_gen["total_gen"],
                total_disc=l_disc.item(),
            )
            if not report.is_finite():
                abort(i)
            state.loss_history.append(report)
            state.iteration = i + 1
            if log_fh:
                log_fh.write(json.dumps(report.to_dict()) + "\n")
                csv_fh.write(report.csv_row() + "\n")
            if hook:
                hook({"iteration": i, "report": report, "g_updated": g_updated,
                      "g_input": g_kind, "lr": lr_at(i, cfg, steps_per_epoch),
                      "updates": dict(updates)})

            if out_dir and cfg.checkpoint_every > 0 and (i + 1) % cfg.checkpoint_every == 0:
                write_checkpoint(os.path.join(out_dir, f"ckpt_{i + 1:07d}.pt"),
                                  cfg, state, train_index.selected_attributes)
    finally:
        _set_requires_grad(disc, True)
        if log_fh:
            log_fh.close()
            csv_fh.close()

    if out_dir:
        write_checkpoint(os.path.join(out_dir, "checkpoint_final.pt"),
                          cfg, state, train_index.selected_attributes)
    return state
