"""Mask-learning objective: data loss + global density penalty + magnitude reward.

The density term penalizes the deviation of the model-wide mean soft-mask
value from the target density; it deliberately does not constrain
individual layers, so mask mass can redistribute across layers freely.
The magnitude term rewards the L1 mass of the effective (masked) weights,
biasing the optimization toward keeping large weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class DensityAccounting:
    """Per-layer soft-mask L1 mass and parameter counts."""

    per_layer_l1: list[float]
    per_layer_count: list[int]
    target_density: float

    @property
    def total_count(self) -> int:
        return sum(self.per_layer_count)

    @property
    def mean_density(self) -> float:
        return sum(self.per_layer_l1) / self.total_count


@dataclass
class LossBreakdown:
    lm_loss: float
    sparsity_loss: float
    weight_loss: float

    @property
    def total(self) -> float:
        return self.lm_loss + self.sparsity_loss + self.weight_loss


def sparsity_loss(soft_masks: list[Tensor], target_density: float,
                  lambda1: float) -> Tensor:
    """lambda1 * | (sum_i ||M_i||_1)/N - rho |, N = total prunable params.

    Global semantics: only the model-wide mean matters, so layers may trade
    density against each other at zero cost.
    """
    if lambda1 < 0:
        raise ValueError(f"lambda1 must be non-negative, got {lambda1}")
    total = sum(m.size for m in soft_masks)
    if total == 0:
        raise ValueError("sparsity_loss: no mask entries")
    acc = None
    for m in soft_masks:
        s = ad.tsum(ad.tabs(m))
        acc = s if acc is None else ad.add(acc, s)
    mean = ad.mul(acc, 1.0 / total)
    return ad.mul(ad.tabs(ad.sub(mean, float(target_density))), float(lambda1))


def weight_loss(effective_weights: list[Tensor], lambda2: float) -> Tensor:
    """-lambda2 * sum_i ||Wtilde_i||_1 -- a reward for retained magnitude."""
    acc = None
    for w in effective_weights:
        s = ad.tsum(ad.tabs(w))
        acc = s if acc is None else ad.add(acc, s)
    return ad.mul(acc, -float(lambda2))


def total_loss(lm: Tensor, sp: Tensor, wt: Tensor) -> tuple[Tensor, LossBreakdown]:
    """Compose the three terms; rejects non-finite inputs by name."""
    parts = {"lm_loss": lm, "sparsity_loss": sp, "weight_loss": wt}
    for name, t in parts.items():
        if not math.isfinite(float(t.data)):
            raise FloatingPointError(f"non-finite objective term: {name} = {float(t.data)}")
    total = ad.add(ad.add(lm, sp), wt)
    breakdown = LossBreakdown(lm_loss=float(lm.data), sparsity_loss=float(sp.data),
                              weight_loss=float(wt.data))
    return total, breakdown


def density_accounting(soft_masks: list[Tensor], target_density: float) -> DensityAccounting:
    return DensityAccounting(
        per_layer_l1=[float(np.abs(m.data).sum()) for m in soft_masks],
        per_layer_count=[m.size for m in soft_masks],
        target_density=target_density,
    )
