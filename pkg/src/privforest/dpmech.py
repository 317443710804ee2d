"""Laplace noise on encrypted counts, per-account capping and per-tree sampling."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import hecore
from .hecore import Ciphertext

ACCOUNT_FIELDS = ("ordering_account", "beneficiary_account")


@dataclass(frozen=True)
class DpConfig:
    epsilon: float = 1.0
    bound: int = 5
    enabled: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.enabled and not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.bound < 1:
            raise ValueError(f"bound must be >= 1, got {self.bound}")

    @property
    def scale(self) -> float:
        return self.bound / self.epsilon


def laplace_sample(rng: np.random.Generator, scale: float, size=None):
    return rng.laplace(0.0, scale, size)


def laplace_cdf(x, scale: float):
    x = np.asarray(x, dtype=float)
    tail = 0.5 * np.exp(-np.abs(x) / scale)
    return np.where(x < 0, tail, 1.0 - tail)


def noise_rng(cfg: DpConfig, bank: int, leaf: int, label: int) -> np.random.Generator:
    """Independent stream per (bank, leaf, label), so noising order does not matter."""
    return np.random.default_rng([cfg.seed, bank, leaf, label])


def add_dp_noise(ct: Ciphertext, cfg: DpConfig, rng: np.random.Generator) -> Ciphertext:
    if not cfg.enabled:
        return ct
    return hecore.he_add(ct, [laplace_sample(rng, cfg.scale)])


def max_multiplicity(txs: Sequence) -> int:
    worst = 0
    for name in ACCOUNT_FIELDS:
        counts = defaultdict(int)
        for tx in txs:
            counts[getattr(tx, name)] += 1
        worst = max(worst, max(counts.values(), default=0))
    return worst


def cap_transactions(txs: Sequence, bound: int, rng: np.random.Generator) -> list:
    """Keep at most ``bound`` transactions per account under both account fields.

    Over-represented accounts keep a uniform random subset. Dropping rows for one
    field can only lower counts for the other, so a pass over each field until
    nothing changes terminates quickly.
    """
    if bound < 1:
        raise ValueError("bound must be >= 1")
    keep = np.ones(len(txs), dtype=bool)
    changed = True
    while changed:
        changed = False
        for name in ACCOUNT_FIELDS:
            groups = defaultdict(list)
            for i in np.flatnonzero(keep):
                groups[getattr(txs[i], name)].append(i)
            for idx in groups.values():
                if len(idx) > bound:
                    chosen = set(rng.choice(idx, size=bound, replace=False).tolist())
                    for i in idx:
                        if i not in chosen:
                            keep[i] = False
                    changed = True
    return [tx for tx, k in zip(txs, keep) if k]


def partition_disjoint(txs: Sequence, tau: int, rng: np.random.Generator) -> list[list]:
    """Split a shuffle of ``txs`` into ``tau`` parts whose sizes differ by at most one."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    perm = rng.permutation(len(txs))
    return [[txs[i] for i in sorted(part)] for part in np.array_split(perm, tau)]


def budget_report(tau: int, epsilon: float, disjoint: bool) -> float:
    return float(epsilon) if disjoint else float(tau * epsilon)


def oversample_minority(txs: Sequence, ratio: float, rng: np.random.Generator,
                        minority: int = 1) -> list:
    """Append about ``ratio - 1`` extra copies of every minority-class transaction."""
    if ratio < 1:
        raise ValueError("oversampling ratio must be >= 1")
    extra = ratio - 1.0
    out = list(txs)
    for tx in txs:
        if tx.label != minority:
            continue
        copies = math.floor(extra) + int(rng.random() < extra - math.floor(extra))
        out.extend(replace(tx, tx_id=f"{tx.tx_id}#{k + 1}") for k in range(copies))
    return out
