"""A tiny byte-level decoder-only language model with maskable linear layers.

Stands in for a frozen pretrained LLM at desk scale: per-block attention
projections (q, k, v, o) and MLP up/down matrices can carry mask logits;
token/position embeddings, the final norm, and the output head are never
masked. All weights are frozen during mask learning.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .masks import MaskLogits, sample_gumbel, noise_rng, soft_mask, apply_mask


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 256
    embed_dim: int = 128
    n_blocks: int = 4
    n_heads: int = 4
    context_len: int = 128
    mlp_ratio: int = 4

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    @property
    def mlp_dim(self) -> int:
        return self.mlp_ratio * self.embed_dim


class TinyCausalLM:
    """Decoder-only transformer; parameters live in a flat name->Tensor dict."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        if config.embed_dim % config.n_heads != 0:
            raise ValueError("embed_dim must be divisible by n_heads")
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        scale = 1.0 / math.sqrt(c.embed_dim)
        resid_scale = scale / math.sqrt(2.0 * c.n_blocks)

        def p(arr):
            return Tensor(arr, requires_grad=True)

        self.params: dict[str, Tensor] = {
            "embed.tok": p(rng.normal(0, 0.02, (c.vocab_size, c.embed_dim))),
            "embed.pos": p(rng.normal(0, 0.02, (c.context_len, c.embed_dim))),
            "norm.gain": p(np.ones(c.embed_dim)),
            "norm.bias": p(np.zeros(c.embed_dim)),
            "head": p(rng.normal(0, scale, (c.vocab_size, c.embed_dim))),
        }
        self.maskable: list[str] = []
        for b in range(c.n_blocks):
            for name in ("q", "k", "v"):
                key = f"block{b}.attn.{name}"
                self.params[key] = p(rng.normal(0, scale, (c.embed_dim, c.embed_dim)))
                self.maskable.append(key)
            key = f"block{b}.attn.o"
            self.params[key] = p(rng.normal(0, resid_scale, (c.embed_dim, c.embed_dim)))
            self.maskable.append(key)
            key = f"block{b}.mlp.up"
            self.params[key] = p(rng.normal(0, scale, (c.mlp_dim, c.embed_dim)))
            self.maskable.append(key)
            key = f"block{b}.mlp.down"
            self.params[key] = p(rng.normal(0, resid_scale / math.sqrt(c.mlp_ratio),
                                            (c.embed_dim, c.mlp_dim)))
            self.maskable.append(key)

    # -- parameter management ---------------------------------------------

    def set_trainable(self, trainable: bool) -> None:
        for t in self.params.values():
            t.requires_grad = trainable

    def param_hash(self) -> str:
        """sha256 over all parameter bytes in name order (frozen-weight check)."""
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return h.hexdigest()

    def maskable_param_count(self) -> int:
        return sum(self.params[n].size for n in self.maskable)

    # -- forward ------------------------------------------------------------

    def _linear(self, x: Tensor, name: str, override: dict[str, Tensor] | None,
                capture: dict[str, np.ndarray] | None) -> Tensor:
        w = override.get(name) if override else None
        if w is None:
            w = self.params[name]
        if capture is not None and name in self.maskable:
            flat = x.data.reshape(-1, x.shape[-1])
            sq = (flat.astype(np.float64) ** 2).sum(axis=0)
            if name in capture:
                capture[name] += sq
            else:
                capture[name] = sq
        return ad.matmul(x, ad.transpose(w, (1, 0)))

    def forward(self, tokens: np.ndarray, override: dict[str, Tensor] | None = None,
                capture: dict[str, np.ndarray] | None = None) -> Tensor:
        """tokens (B, T) ints -> logits (B, T, vocab_size)."""
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        B, T = tokens.shape
        c = self.config
        if T > c.context_len:
            raise ValueError(f"sequence length {T} exceeds context {c.context_len}")

        pos = np.broadcast_to(np.arange(T), (B, T))
        x = ad.add(ad.embedding(self.params["embed.tok"], tokens),
                   ad.embedding(self.params["embed.pos"], pos))

        neg = np.full((T, T), -1e9, dtype=ad.current_dtype())
        causal = Tensor(np.broadcast_to(np.triu(neg, k=1), (B, c.n_heads, T, T)))
        inv_sqrt_dh = 1.0 / math.sqrt(c.head_dim)

        for b in range(c.n_blocks):
            q = self._heads(self._linear(x, f"block{b}.attn.q", override, capture), B, T)
            k = self._heads(self._linear(x, f"block{b}.attn.k", override, capture), B, T)
            v = self._heads(self._linear(x, f"block{b}.attn.v", override, capture), B, T)
            scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), inv_sqrt_dh)
            attn = ad.softmax(ad.add(scores, causal))
            ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)),
                             (B, T, c.embed_dim))
            x = ad.add(x, self._linear(ctx, f"block{b}.attn.o", override, capture))
            h = self._linear(x, f"block{b}.mlp.up", override, capture)
            h = ad.mul(h, ad.sigmoid(h))  # silu
            x = ad.add(x, self._linear(h, f"block{b}.mlp.down", override, capture))

        x = ad.layer_norm(x, self.params["norm.gain"], self.params["norm.bias"])
        return self._linear(x, "head", override, capture)

    def _heads(self, x: Tensor, B: int, T: int) -> Tensor:
        c = self.config
        return ad.transpose(ad.reshape(x, (B, T, c.n_heads, c.head_dim)), (0, 2, 1, 3))

    def lm_loss(self, tokens, targets, override=None) -> Tensor:
        """Mean next-token cross-entropy over every predicted position."""
        return ad.cross_entropy(self.forward(tokens, override), targets)


# -- masked forward --------------------------------------------------------


def build_mask_logits(model: TinyCausalLM, init: dict[str, np.ndarray]) -> dict[str, MaskLogits]:
    """Wrap each maskable weight with trainable logits initialized from init."""
    out = {}
    for name in model.maskable:
        w = model.params[name]
        out[name] = MaskLogits(layer_id=name, weight=w,
                               logits=Tensor(init[name], requires_grad=True))
    return out


def masked_weights(model: TinyCausalLM, mode: str,
                   mask_logits: dict[str, MaskLogits] | None = None,
                   binary_masks: dict[str, np.ndarray] | None = None,
                   alpha: float | None = None, tau: float | None = None,
                   seed: int | None = None, step: int | None = None
                   ) -> tuple[dict[str, Tensor] | None, dict[str, Tensor]]:
    """Per-layer effective weights for a forward pass.

    Returns (override dict or None for dense mode, soft-mask tensors by layer
    -- empty in dense/binary modes).
    """
    if mode == "dense":
        return None, {}
    override: dict[str, Tensor] = {}
    soft: dict[str, Tensor] = {}
    if mode == "binary":
        if binary_masks is None:
            raise ValueError("binary mode requires finalized masks")
        for name in model.maskable:
            w = model.params[name]
            override[name] = Tensor(w.data * binary_masks[name].astype(w.data.dtype))
        return override, soft
    if mode not in ("soft", "noise_free"):
        raise ValueError(f"unknown mask mode {mode!r}")
    if mask_logits is None:
        raise ValueError(f"{mode} mode requires mask logits")
    for name in model.maskable:
        ml = mask_logits[name]
        noise = None
        if mode == "soft":
            rng = noise_rng(seed, name, step)
            noise = sample_gumbel(ml.logits.shape, rng).astype(ad.current_dtype())
        m = soft_mask(ml, alpha, tau, noise)
        soft[name] = m
        override[name] = apply_mask(ml, m)
    return override, soft


# -- checkpointing -----------------------------------------------------------


_META_FIELDS = ("vocab_size", "embed_dim", "n_blocks", "n_heads", "context_len",
                "mlp_ratio")


def save_model(path: str, model: TinyCausalLM) -> None:
    """Write model config (as meta scalars) and parameters to a dense checkpoint."""
    from . import serialize
    tensors: dict[str, np.ndarray] = {
        f"meta/{f}": np.float64(getattr(model.config, f)) for f in _META_FIELDS
    }
    for name, t in model.params.items():
        tensors[name] = t.data
    serialize.save_dense(path, tensors)


def load_model(path: str) -> TinyCausalLM:
    from . import serialize
    tensors = serialize.load_dense(path)
    cfg = ModelConfig(**{f: int(tensors[f"meta/{f}"]) for f in _META_FIELDS})
    model = TinyCausalLM(cfg, seed=0)
    for name in model.params:
        arr = tensors[name]
        if arr.shape != model.params[name].shape:
            raise serialize.CheckpointError(
                f"{path}: {name} has shape {arr.shape}, expected {model.params[name].shape}")
        model.params[name] = Tensor(arr, requires_grad=False)
    return model


# -- calibration data --------------------------------------------------------


class CalibrationStream:
    """Deterministic batches of byte-token windows from a raw text corpus."""

    def __init__(self, tokens: np.ndarray, batch_size: int, seq_len: int, seed: int):
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size < seq_len + 1:
            raise ValueError(f"corpus too small: {tokens.size} tokens for seq_len {seq_len}")
        self.tokens = tokens
        self.batch_size = batch_size
        self.seq_len = seq_len
        self.seed = seed

    def batch(self, step: int) -> tuple[np.ndarray, np.ndarray]:
        """Window starts are drawn from a per-(seed, step) stream."""
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, step]))
        starts = rng.integers(0, self.tokens.size - self.seq_len - 1, size=self.batch_size)
        x = np.stack([self.tokens[s:s + self.seq_len] for s in starts])
        y = np.stack([self.tokens[s + 1:s + self.seq_len + 1] for s in starts])
        return x, y


def load_corpus(path: str) -> np.ndarray:
    """Byte-level tokenization of a UTF-8 text file."""
    with open(path, "rb") as f:
        raw = f.read()
    if not raw:
        raise ValueError(f"empty corpus file: {path}")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def split_corpus(tokens: np.ndarray, holdout_frac: float = 0.1
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint (train, heldout) split by position."""
    cut = int(len(tokens) * (1.0 - holdout_frac))
    return tokens[:cut], tokens[cut:]


# -- pretraining and evaluation ----------------------------------------------


class Adam:
    """Standard Adam with bias correction; optional decoupled weight decay."""

    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros(p.shape, dtype=np.float64) for p in params]
        self.v = [np.zeros(p.shape, dtype=np.float64) for p in params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            g = g.astype(np.float64)
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mhat = self.m[i] / (1 - self.b1 ** self.t)
            vhat = self.v[i] / (1 - self.b2 ** self.t)
            upd = self.lr * mhat / (np.sqrt(vhat) + self.eps)
            if self.weight_decay:
                upd = upd + self.lr * self.weight_decay * p.data.astype(np.float64)
            p.data = (p.data.astype(np.float64) - upd).astype(p.data.dtype)


def pretrain_dense(model: TinyCausalLM, stream: CalibrationStream, steps: int,
                   lr: float = 3e-3) -> list[float]:
    """Train all dense weights with Adam; returns the per-step loss history.

    Aborts on a non-finite loss rather than trying to rescue the run.
    """
    model.set_trainable(True)
    opt = Adam(list(model.params.values()), lr=lr)
    history = []
    for step in range(steps):
        x, y = stream.batch(step)
        loss = model.lm_loss(x, y)
        val = float(loss.data)
        if not math.isfinite(val):
            raise FloatingPointError(f"pretraining diverged at step {step}")
        loss.backward()
        opt.step()
        history.append(val)
    model.set_trainable(False)
    return history


def eval_loss(model: TinyCausalLM, stream: CalibrationStream, n_batches: int,
              override: dict[str, Tensor] | None = None) -> float:
    """Mean cross-entropy over n_batches deterministic held-out batches."""
    if n_batches <= 0:
        raise ValueError("n_batches must be positive")
    total = 0.0
    for i in range(n_batches):
        x, y = stream.batch(i)
        total += float(model.lm_loss(x, y, override).data)
    return total / n_batches


def perplexity(model: TinyCausalLM, stream: CalibrationStream, n_batches: int,
               override: dict[str, Tensor] | None = None) -> float:
    """exp(mean next-token cross-entropy) over the evaluation stream."""
    return math.exp(eval_loss(model, stream, n_batches, override))
