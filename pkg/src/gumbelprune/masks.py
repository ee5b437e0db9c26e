"""Stochastic soft masks over frozen weights.

Each prunable weight matrix W gets a parallel trainable logit matrix P.
The training-time mask is sigmoid((alpha*P + g)/tau) with Gumbel noise g;
annealing alpha up and tau down drives mask entries toward {0,1}. After
training, logits are deterministically converted into a binary mask that
hits the global density budget exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

NOISE_CLAMP = 1e-9


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass
class MaskLogits:
    """Trainable logits P paired with their frozen weight matrix W."""

    layer_id: str
    weight: Tensor        # frozen, requires_grad=False
    logits: Tensor        # requires_grad=True
    param_count: int = field(init=False)

    def __post_init__(self):
        if self.logits.shape != self.weight.shape:
            raise ValueError(
                f"{self.layer_id}: logits shape {self.logits.shape} "
                f"!= weight shape {self.weight.shape}")
        if self.weight.requires_grad:
            raise ValueError(f"{self.layer_id}: weight must be frozen")
        self.param_count = self.weight.size


@dataclass(frozen=True)
class AnnealSchedule:
    """Endpoint-parameterized annealing curve over a fixed step count."""

    start: float
    end: float
    total_steps: int
    shape: str = "linear"  # linear | geometric

    def __post_init__(self):
        if self.shape not in ("linear", "geometric"):
            raise ValueError(f"unknown schedule shape {self.shape!r}")
        if self.shape == "geometric" and (self.start * self.end <= 0):
            raise ValueError("geometric schedule needs nonzero same-sign endpoints")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")

    def value(self, step: int) -> float:
        if not 0 <= step <= self.total_steps:
            raise ValueError(f"step {step} outside [0, {self.total_steps}]")
        t = step / self.total_steps
        if self.shape == "linear":
            return self.start + (self.end - self.start) * t
        return self.start * (self.end / self.start) ** t


def noise_rng(global_seed: int, layer_id: str, step: int) -> np.random.Generator:
    """Deterministic per-(seed, layer, step) noise stream.

    The layer id is hashed with sha256 so the stream does not depend on
    python's salted hash().
    """
    layer_key = int.from_bytes(hashlib.sha256(layer_id.encode()).digest()[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([global_seed, layer_key, step]))


def sample_gumbel(shape, rng: np.random.Generator) -> np.ndarray:
    """g = -log(-log(u)) with u clamped away from {0, 1} to stay finite."""
    u = rng.random(np.prod(shape) if shape else 1).reshape(shape)
    u = np.clip(u, NOISE_CLAMP, 1.0 - NOISE_CLAMP)
    return -np.log(-np.log(u))


def soft_mask(logits: MaskLogits, alpha: float, tau: float,
              noise: np.ndarray | None = None) -> Tensor:
    """Stochastic relaxed mask sigmoid((alpha*P + g)/tau), in (0,1) elementwise.

    noise=None means the noise-free (g=0) evaluation mask.
    """
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    z = ad.mul(logits.logits, float(alpha))
    if noise is not None:
        if noise.shape != logits.logits.shape:
            raise ValueError(
                f"{logits.layer_id}: noise shape {noise.shape} != P shape {logits.logits.shape}")
        z = ad.add(z, Tensor(noise))
    return ad.sigmoid(ad.mul(z, 1.0 / float(tau)))


def apply_mask(logits: MaskLogits, mask: Tensor) -> Tensor:
    """Effective pruned weight M * W; gradient reaches P only (W is frozen)."""
    if mask.shape != logits.weight.shape:
        raise ad.ShapeMismatchError("apply_mask", mask.shape, logits.weight.shape)
    return ad.mul(mask, logits.weight)


def _per_row_topk_mask(scores: np.ndarray, density: float) -> np.ndarray:
    """Binary per-row top-k by score; half-up keep count, ties by column."""
    rows, cols = scores.shape
    keep = _round_half_up(density * cols)
    mask = np.zeros((rows, cols), dtype=np.uint8)
    if keep <= 0:
        return mask
    # stable argsort on -score keeps the lowest column index among ties
    order = np.argsort(-scores, axis=1, kind="stable")
    np.put_along_axis(mask, order[:, :keep], 1, axis=1)
    return mask


def wanda_init(weight: np.ndarray, input_norms: np.ndarray, density: float,
               strength: float) -> np.ndarray:
    """Initialize P to +strength on entries a one-shot activation-aware
    magnitude ranking would keep, -strength elsewhere.

    Scores |W_ij| * norm_j are ranked within each output row.
    """
    if not 0 < density < 1:
        raise ValueError(f"density must be in (0,1), got {density}")
    if strength <= 0:
        raise ValueError(f"strength must be positive, got {strength}")
    input_norms = np.asarray(input_norms)
    if input_norms.shape != (weight.shape[1],):
        raise ValueError(
            f"input_norms length {input_norms.shape} != weight columns {weight.shape[1]}")
    scores = np.abs(weight) * input_norms[None, :]
    keep = _per_row_topk_mask(scores, density)
    return np.where(keep, strength, -strength).astype(weight.dtype)


def random_init(shape, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Each logit independently +/-strength with probability 1/2."""
    if strength <= 0:
        raise ValueError(f"strength must be positive, got {strength}")
    signs = rng.integers(0, 2, size=shape) * 2 - 1
    return (signs * strength).astype(np.float64)


def finalize_mask(all_logits: list[MaskLogits], density: float) -> dict[str, np.ndarray]:
    """Deterministic global top-k conversion of logits into binary masks.

    Exactly round(density*N) entries are kept across all layers, chosen by
    descending P with ties broken by (layer position, row, column). Noise,
    alpha and tau play no role: both scales are positive so the P-ranking
    is unchanged.
    """
    if not 0 < density < 1:
        raise ValueError(f"density must be in (0,1), got {density}")
    total = sum(m.param_count for m in all_logits)
    keep = _round_half_up(density * total)
    values = np.concatenate([m.logits.data.reshape(-1) for m in all_logits])
    # concatenation order is (layer, row, col), so a stable sort on -P
    # realizes the lexicographic tie-break
    order = np.argsort(-values, kind="stable")
    flat = np.zeros(total, dtype=np.uint8)
    flat[order[:keep]] = 1
    out, offset = {}, 0
    for m in all_logits:
        out[m.layer_id] = flat[offset:offset + m.param_count].reshape(m.weight.shape)
        offset += m.param_count
    return out


def binary_density(masks: dict[str, np.ndarray]) -> float:
    kept = sum(int(m.sum()) for m in masks.values())
    total = sum(m.size for m in masks.values())
    return kept / total


def soft_density(all_logits: list[MaskLogits], alpha: float, tau: float) -> float:
    """Global noise-free soft density: mean of sigmoid(alpha*P/tau) entries."""
    s, n = 0.0, 0
    for m in all_logits:
        z = alpha * m.logits.data / tau
        s += float(np.abs(_sigmoid_np(z)).sum())
        n += m.param_count
    return s / n


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
