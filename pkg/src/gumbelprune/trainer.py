"""The mask-learning loop.

Only the per-weight logits P are optimized; model weights stay frozen.
Each step draws fresh per-layer noise, assembles the objective
(data loss + global density penalty + magnitude reward), backpropagates
into P, and applies one Adam update. Scale/temperature annealing can be
disabled per-schedule for the ablation variants.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace, asdict

import numpy as np

from . import autodiff as ad
from . import objective
from .autodiff import Tensor
from .masks import (AnnealSchedule, MaskLogits, finalize_mask, random_init,
                    soft_density, wanda_init)
from .model import (Adam, CalibrationStream, TinyCausalLM, build_mask_logits,
                    masked_weights, perplexity)
from .baselines import collect_activation_norms

ABLATION_VARIANTS = ("full", "lambda2_zero", "random_init", "fixed_alpha", "fixed_tau")


@dataclass
class TrainConfig:
    """Mask-learning hyperparameters.

    Defaults are the published-profile values; `desk_profile` shrinks the
    batch/sequence/step budget to laptop scale.
    """

    steps: int = 2000
    batch_size: int = 256
    seq_len: int = 4096
    lr: float = 1e-2
    tau0: float = 4.0
    tauT: float = 0.05
    alpha0: float = 25.0
    alphaT: float = 350.0
    lambda1: float = 3.0
    lambda2: float = 10.0
    strength: float = 3.0
    weight_decay: float = 0.0
    target_sparsity: float = 0.5
    init_mode: str = "wanda"          # wanda | random
    anneal_alpha: bool = True
    anneal_tau: bool = True
    alpha_shape: str = "linear"
    tau_shape: str = "geometric"
    seed: int = 0
    norm_batches: int = 4             # calibration batches for wanda init
    density_snapshot_every: int = 50
    # With strength 3 and the start-of-schedule scale/temperature, the soft
    # mask begins saturated; float32 rounds sigma'(18.75) to exactly zero and
    # freezes P, so mask learning runs in 64-bit.
    precision: int = 64
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if not 0 < self.target_sparsity < 1:
            raise ValueError("target_sparsity must be in (0,1)")
        if self.init_mode not in ("wanda", "random"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")

    @property
    def target_density(self) -> float:
        return 1.0 - self.target_sparsity


def desk_profile(**overrides) -> TrainConfig:
    """Desk-scale profile: minutes, not GPU-hours."""
    base = dict(steps=500, batch_size=16, seq_len=128)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class TrainLog:
    """Per-step scalar records plus periodic per-layer density snapshots."""

    records: list[dict] = field(default_factory=list)
    density_snapshots: list[dict] = field(default_factory=list)

    CSV_FIELDS = ("step", "lm_loss", "sparsity_loss", "weight_loss", "total",
                  "soft_density", "alpha", "tau")

    def write_csv(self, path: str) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(self.CSV_FIELDS)
            for r in self.records:
                w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k]
                            for k in self.CSV_FIELDS])
        os.replace(tmp, path)

    def write_snapshots(self, path: str) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w") as f:
            json.dump(self.density_snapshots, f, indent=1)
        os.replace(tmp, path)


def init_mask_logits(model: TinyCausalLM, config: TrainConfig,
                     stream: CalibrationStream) -> dict[str, MaskLogits]:
    """Build trainable logits per config.init_mode."""
    rho, s = config.target_density, config.strength
    init: dict[str, np.ndarray] = {}
    if config.init_mode == "wanda":
        norms = collect_activation_norms(model, stream, config.norm_batches)
        for name in model.maskable:
            init[name] = wanda_init(model.params[name].data, norms.per_layer[name],
                                    rho, s)
    else:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xF00D]))
        for name in model.maskable:
            init[name] = random_init(model.params[name].shape, s, rng)
    return build_mask_logits(model, init)


def _schedules(config: TrainConfig) -> tuple[AnnealSchedule, AnnealSchedule]:
    steps = max(config.steps, 1)
    alpha = AnnealSchedule(config.alpha0,
                           config.alphaT if config.anneal_alpha else config.alpha0,
                           steps, config.alpha_shape)
    tau = AnnealSchedule(config.tau0,
                         config.tauT if config.anneal_tau else config.tau0,
                         steps, config.tau_shape)
    return alpha, tau


def train_masks(model: TinyCausalLM, config: TrainConfig, stream: CalibrationStream,
                mask_logits: dict[str, MaskLogits] | None = None
                ) -> tuple[dict[str, MaskLogits], TrainLog]:
    """Optimize mask logits against the composed objective; weights stay frozen.

    Aborts with the offending term named if any loss component diverges.
    """
    model.set_trainable(False)
    with ad.precision(config.precision):
        return _train_masks_inner(model, config, stream, mask_logits)


def _train_masks_inner(model, config, stream, mask_logits):
    if mask_logits is None:
        mask_logits = init_mask_logits(model, config, stream)
    ordered = [mask_logits[n] for n in model.maskable]
    alpha_sched, tau_sched = _schedules(config)
    opt = Adam([m.logits for m in ordered], lr=config.lr,
               eps=config.adam_eps, weight_decay=config.weight_decay)
    log = TrainLog()

    for step in range(config.steps):
        alpha = alpha_sched.value(step)
        tau = tau_sched.value(step)
        x, y = stream.batch(step)
        override, soft = masked_weights(model, "soft", mask_logits,
                                        alpha=alpha, tau=tau,
                                        seed=config.seed, step=step)
        soft_list = [soft[n] for n in model.maskable]
        eff_list = [override[n] for n in model.maskable]
        lm = model.lm_loss(x, y, override)
        sp = objective.sparsity_loss(soft_list, config.target_density, config.lambda1)
        wt = objective.weight_loss(eff_list, config.lambda2)
        try:
            total, breakdown = objective.total_loss(lm, sp, wt)
        except FloatingPointError as e:
            raise FloatingPointError(f"mask training diverged at step {step}: {e}") from e
        total.backward()
        opt.step()

        log.records.append({
            "step": step, "lm_loss": breakdown.lm_loss,
            "sparsity_loss": breakdown.sparsity_loss,
            "weight_loss": breakdown.weight_loss, "total": breakdown.total,
            "soft_density": soft_density(ordered, alpha, tau),
            "alpha": alpha, "tau": tau,
        })
        if step % config.density_snapshot_every == 0 or step == config.steps - 1:
            log.density_snapshots.append(_density_snapshot(ordered, alpha, tau, step))

    return mask_logits, log


def _density_snapshot(ordered: list[MaskLogits], alpha: float, tau: float,
                      step: int) -> dict:
    snap = {"step": step, "per_layer": {}}
    for m in ordered:
        snap["per_layer"][m.layer_id] = soft_density([m], alpha, tau)
    return snap


def make_variant_config(variant: str, base: TrainConfig) -> TrainConfig:
    """Each ablation variant mutates exactly one field of the base config."""
    if variant == "full":
        return base
    if variant == "lambda2_zero":
        return replace(base, lambda2=0.0)
    if variant == "random_init":
        return replace(base, init_mode="random")
    if variant == "fixed_alpha":
        return replace(base, anneal_alpha=False)
    if variant == "fixed_tau":
        return replace(base, anneal_tau=False)
    raise ValueError(f"unknown ablation variant {variant!r}; "
                     f"expected one of {ABLATION_VARIANTS}")


def run_ablation(model: TinyCausalLM, base_config: TrainConfig,
                 train_stream: CalibrationStream, eval_stream: CalibrationStream,
                 eval_batches: int = 8,
                 variants: tuple[str, ...] = ABLATION_VARIANTS) -> list[dict]:
    """Train each variant and report held-out perplexity plus mask metrics."""
    report = []
    for variant in variants:
        cfg = make_variant_config(variant, base_config)
        logits, log = train_masks(model, cfg, train_stream)
        ordered = [logits[n] for n in model.maskable]
        masks = finalize_mask(ordered, cfg.target_density)
        override, _ = masked_weights(model, "binary", binary_masks=masks)
        ppl = perplexity(model, eval_stream, eval_batches, override)
        kept = sum(int(m.sum()) for m in masks.values())
        total = sum(m.size for m in masks.values())
        report.append({
            "variant": variant,
            "perplexity": ppl,
            "binary_density": kept / total,
            "terminal_soft_density": log.records[-1]["soft_density"] if log.records else None,
            "config": asdict(cfg),
        })
    return report
