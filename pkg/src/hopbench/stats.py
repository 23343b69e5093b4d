"""Agreement and reliability statistics for judge audits.

Pure functions over label vectors: chance-corrected agreement (plain and
quadratic-weighted kappa) and Wilson score intervals for raw agreement
rates.
"""
from __future__ import annotations

import math
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass


@dataclass(frozen=True)
class AgreementStats:
    """Raw agreement plus its chance-corrected and interval summaries."""

    raw_agreement: float
    kappa: float
    ci_low: float
    ci_high: float
    n: int


def cohen_kappa(a: Sequence, b: Sequence) -> float:
    """Chance-corrected agreement between two label vectors.

    Expected agreement uses the product of the raters' marginal label
    distributions. Returns ``nan`` as the degenerate-marginals signal when
    expected agreement is 1 (both raters constant on the same label).
    """
    if len(a) != len(b):
        raise ValueError(f"label vectors differ in length: {len(a)} != {len(b)}")
    if not a:
        raise ValueError("label vectors are empty")
    n = len(a)
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    marg_a = Counter(a)
    marg_b = Counter(b)
    p_e = sum(marg_a[k] * marg_b.get(k, 0) for k in marg_a) / (n * n)
    if p_e == 1.0:
        return float("nan")
    return (p_o - p_e) / (1.0 - p_e)


def weighted_kappa(
    a: Sequence[int], b: Sequence[int], weighting: str = "quadratic"
) -> float:
    """Weighted kappa for ordinal 1..4 ratings with quadratic weights.

    Disagreement weight between categories i and j is (i-j)^2 / (k-1)^2
    over the fixed 4-point scale. Returns ``nan`` when the weighted
    expected disagreement is zero.
    """
    if weighting != "quadratic":
        raise ValueError(f"unsupported weighting: {weighting!r}")
    if len(a) != len(b):
        raise ValueError(f"rating vectors differ in length: {len(a)} != {len(b)}")
    if not a:
        raise ValueError("rating vectors are empty")
    categories = (1, 2, 3, 4)
    for vec in (a, b):
        for r in vec:
            if r not in categories:
                raise ValueError(f"rating out of range 1..4: {r!r}")
    n = len(a)
    k = len(categories)

    observed = {(i, j): 0 for i in categories for j in categories}
    for x, y in zip(a, b):
        observed[(x, y)] += 1
    marg_a = Counter(a)
    marg_b = Counter(b)

    def weight(i: int, j: int) -> float:
        return (i - j) ** 2 / (k - 1) ** 2

    num = sum(weight(i, j) * observed[(i, j)] / n for i in categories for j in categories)
    den = sum(
        weight(i, j) * (marg_a.get(i, 0) / n) * (marg_b.get(j, 0) / n)
        for i in categories
        for j in categories
    )
    if den == 0.0:
        return float("nan")
    return 1.0 - num / den


def wilson_ci(p_hat: float, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion, clipped to [0, 1]."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 <= p_hat <= 1.0:
        raise ValueError(f"p_hat must be in [0, 1], got {p_hat}")
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p_hat + z2 / (2 * n)) / denom
    half = z * math.sqrt(p_hat * (1.0 - p_hat) / n + z2 / (4 * n * n)) / denom
    # The interval provably contains p_hat for z >= 0; the min/max with
    # p_hat only guards against float rounding at the boundaries.
    low = max(0.0, min(center - half, p_hat))
    high = min(1.0, max(center + half, p_hat))
    return (low, high)


def agreement_stats(a: Sequence, b: Sequence, z: float = 1.96) -> AgreementStats:
    """Raw agreement, kappa and Wilson interval for two label vectors."""
    if len(a) != len(b):
        raise ValueError(f"label vectors differ in length: {len(a)} != {len(b)}")
    if not a:
        raise ValueError("label vectors are empty")
    n = len(a)
    raw = sum(1 for x, y in zip(a, b) if x == y) / n
    low, high = wilson_ci(raw, n, z)
    return AgreementStats(
        raw_agreement=raw, kappa=cohen_kappa(a, b), ci_low=low, ci_high=high, n=n
    )
