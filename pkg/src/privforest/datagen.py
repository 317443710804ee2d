"""Seeded synthetic PNS transactions and bank account tables.

Anomalies are planted so that both sides matter: a transaction is likely
anomalous when one of its accounts carries the suspicious flag *and* its
amount is large. Suspicious accounts mostly trade with each other, which makes
the ordering and beneficiary flags carry the same signal.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

CURRENCIES = ("USD", "EUR", "GBP", "JPY")
CURRENCY_PROBS = (0.5, 0.25, 0.15, 0.1)
DEFAULT_FLAG_PROBS = {"00": 0.6, "01": 0.3, "99": 0.1}

TX_HEADER = ["tx_id", "ordering_account", "beneficiary_account", "amount", "currency", "hour", "label"]
ACCOUNT_HEADER = ["account_id", "flag"]


@dataclass(slots=True)
class Transaction:
    tx_id: str
    ordering_account: str
    beneficiary_account: str
    amount: float
    currency: str
    hour: int
    label: int = 0
    extra: dict = field(default_factory=dict)

    def value(self, feature_id: str):
        if feature_id in self.extra:
            return self.extra[feature_id]
        return getattr(self, feature_id, None)


@dataclass(frozen=True, slots=True)
class AccountRecord:
    account_id: str
    flag: str


@dataclass(frozen=True)
class PlantedRule:
    flag: str = "99"
    amount_threshold: float = 500_000.0
    share: float = 0.8  # fraction of anomalies drawn from inside the rule

    def matches(self, tx: Transaction, flags: Mapping[str, str]) -> bool:
        flagged = (flags.get(tx.ordering_account) == self.flag
                   or flags.get(tx.beneficiary_account) == self.flag)
        return flagged and tx.amount > self.amount_threshold


def bank_prefix(j: int) -> str:
    return f"B{j + 1}-"


def gen_accounts(seed: int, n_banks: int, per_bank: int | Sequence[int],
                 flag_probs: Mapping[str, float] | None = None) -> list[list[AccountRecord]]:
    flag_probs = dict(flag_probs or DEFAULT_FLAG_PROBS)
    flags = list(flag_probs)
    probs = np.array([flag_probs[f] for f in flags], dtype=float)
    if (probs < 0).any() or probs.sum() <= 0:
        raise ValueError("flag probabilities must be non-negative and not all zero")
    probs = probs / probs.sum()
    counts = [per_bank] * n_banks if isinstance(per_bank, int) else list(per_bank)
    if len(counts) != n_banks:
        raise ValueError("need one account count per bank")
    rng = np.random.default_rng(seed)
    tables = []
    for j, n in enumerate(counts):
        drawn = rng.choice(len(flags), size=n, p=probs)
        tables.append([AccountRecord(f"{bank_prefix(j)}{i:06d}", flags[k])
                       for i, k in enumerate(drawn)])
    return tables


def gen_transactions(seed: int, n_tx: int, accounts: Sequence[Sequence[AccountRecord]],
                     anomaly_rate: float, planted: PlantedRule | None = None,
                     homophily: float = 0.95, leak: float = 0.005,
                     id_prefix: str = "tx") -> list[Transaction]:
    if not 0.0 <= anomaly_rate <= 1.0:
        raise ValueError(f"anomaly_rate must lie in [0, 1], got {anomaly_rate}")
    planted = planted or PlantedRule()
    records = [r for table in accounts for r in table]
    if not records:
        raise ValueError("no accounts to transact between")
    flags = {r.account_id: r.flag for r in records}
    ids = np.array([r.account_id for r in records])
    suspicious = np.array([r.flag == planted.flag for r in records])
    sus_ids, clean_ids = ids[suspicious], ids[~suspicious]
    rng = np.random.default_rng(seed)

    txs = []
    for i in range(n_tx):
        sender = ids[rng.integers(len(ids))]
        to_suspicious = rng.random() < (homophily if flags[sender] == planted.flag else leak)
        pool = sus_ids if (to_suspicious and sus_ids.size) or not clean_ids.size else clean_ids
        receiver = pool[rng.integers(len(pool))]
        currency = CURRENCIES[rng.choice(len(CURRENCIES), p=CURRENCY_PROBS)]
        txs.append(Transaction(f"{id_prefix}{i:07d}", str(sender), str(receiver),
                               round(float(rng.uniform(10, 1_000_000)), 2), currency,
                               int(rng.integers(0, 24))))

    inside = np.array([planted.matches(tx, flags) for tx in txs], dtype=bool)
    if anomaly_rate <= 0.0 or anomaly_rate >= 1.0:
        labels = np.full(n_tx, int(anomaly_rate >= 1.0))
    else:
        q = inside.mean() if n_tx else 0.0
        p_in = min(1.0, anomaly_rate * planted.share / q) if q > 0 else 0.0
        p_out = float(np.clip((anomaly_rate - q * p_in) / (1.0 - q), 0.0, 1.0)) if q < 1 else 0.0
        labels = (rng.random(n_tx) < np.where(inside, p_in, p_out)).astype(int)
    for tx, lab in zip(txs, labels):
        tx.label = int(lab)
    return txs


def derive_features(txs: Sequence[Transaction]) -> list[Transaction]:
    """Add sender-receiver pair frequency and sender out-degree, computed from ``txs`` only."""
    pairs = Counter((tx.ordering_account, tx.beneficiary_account) for tx in txs)
    degree = out_degrees(txs)
    return [replace(tx, extra={**tx.extra,
                               "pair_freq": pairs[tx.ordering_account, tx.beneficiary_account],
                               "out_degree": degree[tx.ordering_account]})
            for tx in txs]


def out_degrees(txs: Sequence[Transaction]) -> Counter:
    return Counter(tx.ordering_account for tx in txs)


def account_flags(tables: Sequence[Sequence[AccountRecord]]) -> dict[str, str]:
    return {r.account_id: r.flag for table in tables for r in table}


def write_transactions(path: str | Path, txs: Sequence[Transaction]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TX_HEADER)
        for tx in txs:
            w.writerow([tx.tx_id, tx.ordering_account, tx.beneficiary_account,
                        f"{tx.amount:.2f}", tx.currency, tx.hour, tx.label])


def read_transactions(path: str | Path) -> list[Transaction]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [Transaction(r["tx_id"], r["ordering_account"], r["beneficiary_account"],
                        float(r["amount"]), r["currency"], int(r["hour"]),
                        int(r["label"]) if r.get("label") not in (None, "") else 0)
            for r in rows]


def write_accounts(path: str | Path, table: Sequence[AccountRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ACCOUNT_HEADER)
        for r in table:
            w.writerow([r.account_id, r.flag])


def read_accounts(path: str | Path) -> list[AccountRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [AccountRecord(r["account_id"], r["flag"]) for r in csv.DictReader(fh)]
