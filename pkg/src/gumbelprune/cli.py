"""Command-line surface: pretrain / prune / baseline / eval / ablate /
alloc / patterns / export.

Flags mirror TrainConfig field names. `--sparsity` is converted to a kept
density internally (density = 1 - sparsity). A flat JSON config file can
supply TrainConfig values; explicit flags override it. Binary masks (and
trained logits) travel between subcommands as an .npz file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import analysis, serialize
from .baselines import baseline_masks, collect_activation_norms
from .masks import finalize_mask
from .model import (CalibrationStream, ModelConfig, TinyCausalLM, load_corpus,
                    load_model, masked_weights, perplexity, pretrain_dense,
                    save_model, split_corpus, build_mask_logits)
from .trainer import (ABLATION_VARIANTS, TrainConfig, desk_profile,
                      make_variant_config, run_ablation, train_masks)

MASK_PREFIX = "mask::"
LOGIT_PREFIX = "logits::"


def _save_masks(path: str, masks: dict[str, np.ndarray],
                logits: dict[str, np.ndarray] | None = None) -> None:
    payload = {MASK_PREFIX + k: v.astype(np.uint8) for k, v in masks.items()}
    if logits:
        payload.update({LOGIT_PREFIX + k: v for k, v in logits.items()})
    tmp = path + ".tmp.npz"
    np.savez(tmp, **payload)
    os.replace(tmp, path)


def _load_masks(path: str) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    data = np.load(path)
    masks = {k[len(MASK_PREFIX):]: data[k] for k in data.files if k.startswith(MASK_PREFIX)}
    logits = {k[len(LOGIT_PREFIX):]: data[k] for k in data.files if k.startswith(LOGIT_PREFIX)}
    return masks, logits


def _streams(args, config: TrainConfig | None = None):
    tokens = load_corpus(args.corpus)
    train_tok, held_tok = split_corpus(tokens)
    bs = config.batch_size if config else args.batch_size
    sl = config.seq_len if config else args.seq_len
    seed = config.seed if config else args.seed
    train = CalibrationStream(train_tok, bs, sl, seed)
    held = CalibrationStream(held_tok, bs, sl, seed + 1)
    return train, held


def _train_config(args) -> TrainConfig:
    values = {}
    if args.config:
        with open(args.config) as f:
            values.update(json.load(f))
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(values) - fields
    if unknown:
        raise SystemExit(f"unknown config keys: {sorted(unknown)}")
    for f in fields:
        flag = getattr(args, f, None)
        if flag is not None:
            values[f] = flag
    if args.sparsity is not None:
        values["target_sparsity"] = args.sparsity
    if args.profile == "desk":
        return desk_profile(**values)
    return TrainConfig(**values)


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat JSON file of TrainConfig values")
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seq-len", dest="seq_len", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--strength", type=float)
    p.add_argument("--sparsity", type=float, help="target sparsity; density = 1 - sparsity")
    p.add_argument("--init", dest="init_mode", choices=("wanda", "random"))
    p.add_argument("--seed", type=int)
    p.add_argument("--tau0", type=float)
    p.add_argument("--tauT", type=float)
    p.add_argument("--alpha0", type=float)
    p.add_argument("--alphaT", type=float)


def cmd_pretrain(args) -> int:
    cfg = ModelConfig(vocab_size=args.vocab_size, embed_dim=args.embed_dim,
                      n_blocks=args.n_blocks, n_heads=args.n_heads,
                      context_len=args.context_len)
    model = TinyCausalLM(cfg, seed=args.seed)
    tokens = load_corpus(args.corpus)
    train_tok, _ = split_corpus(tokens)
    stream = CalibrationStream(train_tok, args.batch_size, args.seq_len, args.seed)
    history = pretrain_dense(model, stream, args.steps, lr=args.lr)
    save_model(args.out, model)
    print(f"pretrained {args.steps} steps; final loss {history[-1]:.4f}; wrote {args.out}")
    return 0


def cmd_prune(args) -> int:
    config = _train_config(args)
    model = load_model(args.dense)
    train, _ = _streams(args, config)
    logits, log = train_masks(model, config, train)
    ordered = [logits[n] for n in model.maskable]
    masks = finalize_mask(ordered, config.target_density)
    os.makedirs(args.out_dir, exist_ok=True)
    _save_masks(os.path.join(args.out_dir, "masks.npz"), masks,
                {n: logits[n].logits.data for n in model.maskable})
    log.write_csv(os.path.join(args.out_dir, "trainlog.csv"))
    log.write_snapshots(os.path.join(args.out_dir, "densities.json"))
    with open(os.path.join(args.out_dir, "config.json"), "w") as f:
        json.dump(dataclasses.asdict(config), f, indent=1)
    kept = sum(int(m.sum()) for m in masks.values())
    total = sum(m.size for m in masks.values())
    print(f"trained {config.steps} steps; binary density {kept / total:.6f}; "
          f"artifacts in {args.out_dir}")
    return 0


def cmd_baseline(args) -> int:
    model = load_model(args.dense)
    density = 1.0 - args.sparsity
    norms = None
    if args.method == "wanda":
        train, _ = _streams(args)
        norms = collect_activation_norms(model, train, args.norm_batches)
    masks = baseline_masks(model, args.method, density, norms)
    _save_masks(args.out, masks)
    print(f"{args.method} baseline at density {density}; wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.dense)
    _, held = _streams(args)
    override = None
    if args.mode == "binary":
        masks, _ = _load_masks(args.masks)
        override, _ = masked_weights(model, "binary", binary_masks=masks)
    elif args.mode == "noise_free":
        _, logit_arrays = _load_masks(args.masks)
        if not logit_arrays:
            raise SystemExit("noise_free mode needs trained logits in the masks file")
        mask_logits = build_mask_logits(model, logit_arrays)
        override, _ = masked_weights(model, "noise_free", mask_logits,
                                     alpha=args.alpha, tau=args.tau)
    ppl = perplexity(model, held, args.eval_batches, override)
    print(f"perplexity ({args.mode}): {ppl:.4f}")
    return 0


def cmd_ablate(args) -> int:
    config = _train_config(args)
    model = load_model(args.dense)
    train, held = _streams(args, config)
    variants = tuple(args.variant) if args.variant else ABLATION_VARIANTS
    for v in variants:
        make_variant_config(v, config)  # validate before the long runs
    report = run_ablation(model, config, train, held,
                          eval_batches=args.eval_batches, variants=variants)
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "ablation.json")
    with open(out, "w") as f:
        json.dump(report, f, indent=1)
    for row in report:
        print(f"{row['variant']:>14}: ppl {row['perplexity']:.4f} "
              f"density {row['binary_density']:.6f}")
    print(f"wrote {out}")
    return 0


def cmd_alloc(args) -> int:
    masks, _ = _load_masks(args.masks)
    report = analysis.allocation_report(masks)
    csv_text = analysis.allocation_csv(report)
    if args.out:
        tmp = args.out + ".tmp"
        with open(tmp, "w") as f:
            f.write(csv_text)
        os.replace(tmp, args.out)
    print(csv_text, end="")
    print(f"# stddev across blocks: {report['stddev']:.6f}", file=sys.stderr)
    return 0


def cmd_patterns(args) -> int:
    r = analysis.count_patterns(args.n, args.k)
    if r.representable:
        print(r.exact)
    else:
        print(f"C({r.n},{r.k}) has {r.decimal_digits} decimal digits")
    print(f"log2 = {r.exact_log2:.4f}; entropy estimate n*H2(k/n) = {r.stirling_log2:.4f}; "
          f"fits 64-bit index: {r.representable}", file=sys.stderr)
    return 0


def cmd_export(args) -> int:
    model = load_model(args.dense)
    masks, _ = _load_masks(args.masks)
    layers = [serialize.encode_sparse_layer(n, model.params[n].data, masks[n])
              for n in model.maskable]
    serialize.save_sparse(args.out, layers)
    print(f"exported {len(layers)} sparse layers to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gumbelprune",
                                description="Learnable unstructured pruning toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("pretrain", help="train a dense tiny LM on a text corpus")
    pre.add_argument("--corpus", required=True)
    pre.add_argument("--out", required=True)
    pre.add_argument("--steps", type=int, default=400)
    pre.add_argument("--batch-size", dest="batch_size", type=int, default=16)
    pre.add_argument("--seq-len", dest="seq_len", type=int, default=128)
    pre.add_argument("--lr", type=float, default=3e-3)
    pre.add_argument("--seed", type=int, default=0)
    pre.add_argument("--vocab-size", dest="vocab_size", type=int, default=256)
    pre.add_argument("--embed-dim", dest="embed_dim", type=int, default=128)
    pre.add_argument("--n-blocks", dest="n_blocks", type=int, default=4)
    pre.add_argument("--n-heads", dest="n_heads", type=int, default=4)
    pre.add_argument("--context-len", dest="context_len", type=int, default=128)
    pre.set_defaults(func=cmd_pretrain)

    pr = sub.add_parser("prune", help="learn masks on a frozen dense checkpoint")
    pr.add_argument("--dense", required=True)
    pr.add_argument("--corpus", required=True)
    pr.add_argument("--out-dir", required=True)
    _add_train_flags(pr)
    pr.set_defaults(func=cmd_prune)

    bl = sub.add_parser("baseline", help="one-shot wanda/magnitude masks")
    bl.add_argument("--dense", required=True)
    bl.add_argument("--corpus", required=True)
    bl.add_argument("--method", choices=("wanda", "magnitude"), required=True)
    bl.add_argument("--sparsity", type=float, default=0.5)
    bl.add_argument("--out", required=True)
    bl.add_argument("--norm-batches", dest="norm_batches", type=int, default=4)
    bl.add_argument("--batch-size", dest="batch_size", type=int, default=16)
    bl.add_argument("--seq-len", dest="seq_len", type=int, default=128)
    bl.add_argument("--seed", type=int, default=0)
    bl.set_defaults(func=cmd_baseline)

    ev = sub.add_parser("eval", help="held-out perplexity under a mask mode")
    ev.add_argument("--dense", required=True)
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--masks")
    ev.add_argument("--mode", choices=("dense", "binary", "noise_free"), default="binary")
    ev.add_argument("--alpha", type=float, default=25.0)
    ev.add_argument("--tau", type=float, default=4.0)
    ev.add_argument("--eval-batches", dest="eval_batches", type=int, default=8)
    ev.add_argument("--batch-size", dest="batch_size", type=int, default=16)
    ev.add_argument("--seq-len", dest="seq_len", type=int, default=128)
    ev.add_argument("--seed", type=int, default=0)
    ev.set_defaults(func=cmd_eval)

    ab = sub.add_parser("ablate", help="run the ablation variant grid")
    ab.add_argument("--dense", required=True)
    ab.add_argument("--corpus", required=True)
    ab.add_argument("--out-dir", required=True)
    ab.add_argument("--variant", action="append", choices=ABLATION_VARIANTS)
    ab.add_argument("--eval-batches", dest="eval_batches", type=int, default=8)
    _add_train_flags(ab)
    ab.set_defaults(func=cmd_ablate)

    al = sub.add_parser("alloc", help="per-block density report for finalized masks")
    al.add_argument("--masks", required=True)
    al.add_argument("--out")
    al.set_defaults(func=cmd_alloc)

    pt = sub.add_parser("patterns", help="count binary masks of width n with k kept")
    pt.add_argument("--n", type=int, required=True)
    pt.add_argument("--k", type=int, required=True)
    pt.set_defaults(func=cmd_patterns)

    ex = sub.add_parser("export", help="write a bitmap+values sparse checkpoint")
    ex.add_argument("--dense", required=True)
    ex.add_argument("--masks", required=True)
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_export)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
