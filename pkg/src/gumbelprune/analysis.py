"""Mask-space combinatorics and allocation reporting.

Counting the binary masks of a given row width and keep count shows why a
logit-per-pattern parameterization cannot scale: the exact count is a big
integer whose log2 grows like n * H2(k/n). This module computes the exact
count, its size, and the entropy estimate, plus per-block density reports
for finalized masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class PatternCountReport:
    n: int
    k: int
    exact: int
    exact_log2: float
    decimal_digits: int
    stirling_log2: float
    representable: bool   # exact count indexable by a 64-bit logit table


def binary_entropy(rho: float) -> float:
    """H2(rho) = -rho*log2(rho) - (1-rho)*log2(1-rho); 0 at the endpoints."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0,1], got {rho}")
    if rho in (0.0, 1.0):
        return 0.0
    return -rho * math.log2(rho) - (1.0 - rho) * math.log2(1.0 - rho)


def count_patterns(n: int, k: int) -> PatternCountReport:
    """Exact big-integer C(n,k) with size measures and the entropy estimate."""
    if k < 0 or n < 0 or k > n:
        raise ValueError(f"need 0 <= k <= n, got n={n}, k={k}")
    exact = math.comb(n, k)
    return PatternCountReport(
        n=n, k=k, exact=exact,
        exact_log2=_log2_bigint(exact),
        decimal_digits=_decimal_digits(exact),
        stirling_log2=n * binary_entropy(k / n) if n else 0.0,
        representable=exact < 2 ** 64,
    )


def _log2_bigint(x: int) -> float:
    """log2 of an arbitrarily large positive integer without overflow."""
    if x <= 0:
        raise ValueError("x must be positive")
    bits = x.bit_length()
    if bits <= 960:
        return math.log2(x)
    shift = bits - 960
    return math.log2(x >> shift) + shift


def _decimal_digits(x: int) -> int:
    """Digit count without materializing a decimal string (no str-length limit)."""
    if x < 10 ** 15:
        return len(str(x))
    d = int(_log2_bigint(x) * math.log10(2)) + 1
    while 10 ** d <= x:
        d += 1
    while 10 ** (d - 1) > x:
        d -= 1
    return d


def pascal_binomial(n: int, k: int) -> int:
    """Independent oracle: C(n,k) via Pascal's triangle recurrence."""
    if k < 0 or k > n:
        return 0
    row = [1]
    for _ in range(n):
        row = [1] + [row[i] + row[i + 1] for i in range(len(row) - 1)] + [1]
    return row[k]


# -- allocation report --------------------------------------------------------


def block_of(layer_id: str) -> str:
    """Transformer block key of a maskable layer id (e.g. 'block2')."""
    return layer_id.split(".")[0]


def allocation_report(masks: dict[str, np.ndarray]) -> dict:
    """Per-block and global densities of a finalized mask set."""
    blocks: dict[str, list[int]] = {}
    for layer_id, m in masks.items():
        blocks.setdefault(block_of(layer_id), [0, 0])
        b = blocks[block_of(layer_id)]
        b[0] += int(np.asarray(m).sum())
        b[1] += int(np.asarray(m).size)
    per_block = {name: kept / total for name, (kept, total) in sorted(blocks.items())}
    kept = sum(v[0] for v in blocks.values())
    total = sum(v[1] for v in blocks.values())
    dens = list(per_block.values())
    return {
        "per_block": per_block,
        "global_density": kept / total,
        "min": min(dens),
        "max": max(dens),
        "stddev": float(np.std(dens)),
    }


def allocation_csv(report: dict) -> str:
    lines = ["block,density"]
    for name, d in report["per_block"].items():
        lines.append(f"{name},{d!r}")
    lines.append(f"GLOBAL,{report['global_density']!r}")
    return "\n".join(lines) + "\n"
