"""Red-leaf expectation, operation cost reports and classification metrics."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError
from .forest import BANK, FeatureSpec, build_tree

CIPHERTEXT_TYPES = ("ct", "ct_bits")


def expected_red_leaves(c_s: int, c_b: int, h: int, tau: int = 1) -> float:
    """tau * 2^h * (1 - (c_s / (c_s + c_b))^h) for binary trees of height h."""
    if c_s < 0 or c_b < 0 or c_s + c_b < 1:
        raise DomainError("the condition pool must be non-empty")
    if h < 1:
        raise DomainError("height must be >= 1")
    return tau * 2.0 ** h * (1.0 - (c_s / (c_s + c_b)) ** h)


def expected_red_leaves_branching(pns_branching: Sequence[int], bank_branching: Sequence[int],
                                  h: int, tau: int = 1) -> float:
    """Expected red leaves when condition k splits into ``branching[k]`` edges.

    With pool C = S + B drawn uniformly at unblocked nodes:
    R(h) = (sum_S b R(h-1) + sum_B b P(h-1)) / |C|, where P(h) = (mean_S b)^h
    counts leaves of a PNS-only subtree. Binary splits give the closed form above.
    """
    pool = len(pns_branching) + len(bank_branching)
    if pool < 1:
        raise DomainError("the condition pool must be non-empty")
    if not len(pns_branching) and h > 1:
        raise DomainError("nodes below a bank condition need PNS conditions to draw from")
    mean_s = float(np.mean(pns_branching)) if len(pns_branching) else 0.0
    red = 0.0
    for level in range(1, h + 1):
        red = (sum(pns_branching) * red + sum(bank_branching) * mean_s ** (level - 1)) / pool
    return tau * red


def lemma_pools(c_s: int, c_b: int) -> tuple[list[FeatureSpec], list[FeatureSpec]]:
    """Binary conditions matching the counting model: one feature per condition."""
    pns = [FeatureSpec.numeric(f"s{i}", 0.0, 1.0) for i in range(c_s)]
    bank = [FeatureSpec.categorical(f"b{i}", ("0", "1"), owner=BANK, account_field="account")
            for i in range(c_b)]
    return pns, bank


@dataclass(frozen=True)
class McResult:
    mean: float
    stderr: float
    trials: int

    def within(self, target: float, rel: float) -> bool:
        return abs(self.mean - target) <= rel * abs(target)


def monte_carlo_red_leaves(seed: int, c_s: int, c_b: int, h: int, trials: int) -> McResult:
    """Mean red-leaf count per tree over ``trials`` trees drawn by :func:`build_tree`."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    pns, bank = lemma_pools(c_s, c_b)
    rng = np.random.default_rng(seed)
    counts = np.empty(trials)
    for t in range(trials):
        tree = build_tree(rng, pns, bank, h, t)
        counts[t] = sum(1 for leaf in tree.leaves if leaf.bank_feature)
    stderr = counts.std(ddof=1) / math.sqrt(trials) if trials > 1 else 0.0
    return McResult(float(counts.mean()), float(stderr), trials)


def lemma_table(c_s: int, c_b: int, h: int, tau: int, trials: int = 0, seed: int = 0) -> list[dict]:
    """Per-level expectation rows; the last row also carries the Monte Carlo check."""
    rows = []
    for level in range(1, h + 1):
        row = {"height": level,
               "expected_per_tree": expected_red_leaves(c_s, c_b, level, 1),
               "expected_forest": expected_red_leaves(c_s, c_b, level, tau)}
        rows.append(row)
    if trials:
        mc = monte_carlo_red_leaves(seed, c_s, c_b, h, trials)
        rows[-1].update(mc_mean_per_tree=mc.mean, mc_stderr=mc.stderr, mc_trials=mc.trials)
    return rows


def _binary(x) -> np.ndarray:
    arr = np.asarray(x).astype(int).ravel()
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return arr


def average_precision(scores: Sequence[float], truth: Sequence[int]) -> float:
    """Step-wise area under precision-recall, one step per distinct score."""
    y = _binary(truth)
    s = np.asarray(scores, dtype=float).ravel()
    positives = y.sum()
    if positives == 0:
        return 0.0
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    cut = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[cut]
    precision = tp / (cut + 1)
    recall = tp / positives
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def evaluate(predictions: Sequence[int], truth: Sequence[int],
             scores: Sequence[float] | None = None) -> dict[str, float]:
    """Accuracy, precision, recall, F1 and average precision (scores default to predictions)."""
    p, y = _binary(predictions), _binary(truth)
    if p.size != y.size:
        raise ValueError("predictions and truth differ in length")
    tp = int(((p == 1) & (y == 1)).sum())
    fp = int(((p == 1) & (y == 0)).sum())
    fn = int(((p == 0) & (y == 1)).sum())
    tn = int(((p == 0) & (y == 0)).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "accuracy": (tp + tn) / y.size if y.size else 0.0,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "average_precision": average_precision(p if scores is None else scores, y),
        "tp": tp, "fp": fp, "fn": fn, "tn": tn,
    }


def op_delta(before: Mapping[str, int], after: Mapping[str, int]) -> dict[str, int]:
    return {k: after[k] - before.get(k, 0) for k in after}


def ciphertexts_by_pair(records: Iterable[dict]) -> dict[str, int]:
    out: dict[str, int] = defaultdict(int)
    for r in records:
        if r.get("direction") != "send":
            continue
        n = sum(r.get("types", {}).get(t, 0) for t in CIPHERTEXT_TYPES)
        out[f"{r['src']}->{r['dst']}"] += n
    return dict(sorted(out.items()))


@dataclass
class CostReport:
    pet_count: int = 0
    he_mul_count: int = 0
    he_add_count: int = 0
    bootstrap_count: int = 0
    rotate_count: int = 0
    compare_count: int = 0
    encrypt_count: int = 0
    decrypt_count: int = 0
    ciphertexts_sent: dict[str, int] = field(default_factory=dict)
    phases: dict[str, dict[str, int]] = field(default_factory=dict)

    @classmethod
    def from_phases(cls, phases: Mapping[str, Mapping[str, int]],
                    records: Iterable[dict] = ()) -> "CostReport":
        total: dict[str, int] = defaultdict(int)
        for ops in phases.values():
            for k, v in ops.items():
                total[k] += v
        return cls(total["pet"], total["mul"], total["add"], total["bootstrap"],
                   total["rotate"], total["compare"], total["encrypt"], total["decrypt"],
                   ciphertexts_by_pair(records), {k: dict(v) for k, v in phases.items()})

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        names = ["pet", "mul", "add", "rotate", "compare", "bootstrap", "encrypt", "decrypt"]
        lines = ["phase      " + " ".join(f"{n:>10}" for n in names)]
        for phase, ops in self.phases.items():
            lines.append(f"{phase:<10} " + " ".join(f"{ops.get(n, 0):>10}" for n in names))
        return "\n".join(lines)
