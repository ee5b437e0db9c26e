"""One-shot pruning baselines: magnitude and activation-aware magnitude.

Both rank weights inside each output row and keep the top round(rho*n)
per row, so every baseline mask has identical per-row density. A
per-layer global grouping is available behind a flag for ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masks import _per_row_topk_mask, _round_half_up
from .model import TinyCausalLM, CalibrationStream


@dataclass
class ActivationNorms:
    """Per-layer L2 norms of each input feature over a calibration pass."""

    per_layer: dict[str, np.ndarray]


def collect_activation_norms(model: TinyCausalLM, stream: CalibrationStream,
                             n_batches: int) -> ActivationNorms:
    """Dense forward passes accumulating sqrt(sum of squared inputs) per feature."""
    if n_batches <= 0:
        raise ValueError("n_batches must be positive")
    capture: dict[str, np.ndarray] = {}
    for i in range(n_batches):
        x, _ = stream.batch(i)
        model.forward(x, capture=capture)
    return ActivationNorms(per_layer={k: np.sqrt(v) for k, v in capture.items()})


def _global_topk_mask(scores: np.ndarray, density: float) -> np.ndarray:
    keep = _round_half_up(density * scores.size)
    order = np.argsort(-scores.reshape(-1), kind="stable")
    flat = np.zeros(scores.size, dtype=np.uint8)
    flat[order[:keep]] = 1
    return flat.reshape(scores.shape)


def magnitude_mask(weight: np.ndarray, density: float,
                   per_layer_global: bool = False) -> np.ndarray:
    """Keep the largest-|w| entries per output row (ties by column index)."""
    if not 0 < density < 1:
        raise ValueError(f"density must be in (0,1), got {density}")
    scores = np.abs(weight)
    if per_layer_global:
        return _global_topk_mask(scores, density)
    return _per_row_topk_mask(scores, density)


def wanda_mask(weight: np.ndarray, norms: np.ndarray, density: float,
               per_layer_global: bool = False) -> np.ndarray:
    """Keep the largest |w_ij| * norm_j entries per output row."""
    if not 0 < density < 1:
        raise ValueError(f"density must be in (0,1), got {density}")
    norms = np.asarray(norms)
    if norms.shape != (weight.shape[1],):
        raise ValueError(
            f"norms length {norms.shape} != weight columns {weight.shape[1]}")
    scores = np.abs(weight) * norms[None, :]
    if per_layer_global:
        return _global_topk_mask(scores, density)
    return _per_row_topk_mask(scores, density)


def baseline_masks(model: TinyCausalLM, method: str, density: float,
                   norms: ActivationNorms | None = None,
                   per_layer_global: bool = False) -> dict[str, np.ndarray]:
    """Binary masks for every maskable layer using one baseline method."""
    out = {}
    for name in model.maskable:
        w = model.params[name].data
        if method == "magnitude":
            out[name] = magnitude_mask(w, density, per_layer_global)
        elif method == "wanda":
            if norms is None:
                raise ValueError("wanda baseline requires activation norms")
            out[name] = wanda_mask(w, norms.per_layer[name], density, per_layer_global)
        else:
            raise ValueError(f"unknown baseline method {method!r}")
    return out
