"""Seeded end-to-end runs: data, training, inference and model persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import datagen, hecore
from .analysis import CostReport, op_delta
from .config import RunConfig
from .datagen import AccountRecord, PlantedRule, Transaction
from .dpmech import DpConfig, cap_transactions, max_multiplicity, oversample_minority, partition_disjoint
from .forest import (Forest, build_forest, classify_leaves, default_bank_features,
                     default_pns_features, forest_from_dict, forest_to_dict)
from .hecore import Ciphertext, KeyPair, PublicKey, SecretKey
from .protocol import Bank, Federation, ProtocolConfig, pns_infer, setup, train_federated


@dataclass
class Dataset:
    accounts: list[list[AccountRecord]]
    train: list[Transaction]
    test: list[Transaction]


def planted_rule(cfg: RunConfig) -> PlantedRule:
    return PlantedRule(cfg.data.suspicious_flag, cfg.data.amount_threshold)


def generate(cfg: RunConfig) -> Dataset:
    d = cfg.data
    seed = cfg.run.seed
    accounts = datagen.gen_accounts(seed, d.banks, d.accounts_per_bank, cfg.flag_probs())
    txs = datagen.gen_transactions(seed, d.transactions + d.test_transactions, accounts,
                                   d.anomaly_rate, planted_rule(cfg), d.homophily, d.leak)
    return Dataset(accounts, txs[: d.transactions], txs[d.transactions:])


def make_forest(cfg: RunConfig) -> Forest:
    flags = sorted(cfg.flag_probs())
    return build_forest(cfg.forest_seed, cfg.forest.tau, cfg.forest.height,
                        default_pns_features(), default_bank_features(flags))


def training_subsets(txs: Sequence[Transaction], tau: int, dp: DpConfig, seed: int,
                     oversample_ratio: float = 1.0) -> list[list[Transaction]]:
    """Cap (when DP is on), oversample, then split into disjoint per-tree subsets."""
    rng = np.random.default_rng([seed, 0x636170])
    txs = list(txs)
    if dp.enabled:
        txs = cap_transactions(txs, dp.bound, rng)
    if oversample_ratio > 1:
        txs = oversample_minority(txs, oversample_ratio, rng)
    return partition_disjoint(txs, tau, rng)


@dataclass
class TrainedRun:
    forest: Forest
    fed: Federation
    subsets: list[list[Transaction]]
    green_labels: dict[str, int]
    phases: dict[str, dict[str, int]]

    @property
    def n_red(self) -> int:
        return len(classify_leaves(self.forest)[1])

    def cost_report(self) -> CostReport:
        return CostReport.from_phases(self.phases, self.fed.net.records())


def train_run(cfg: RunConfig, accounts: Sequence[Sequence[AccountRecord]],
              train_txs: Sequence[Transaction], forest: Forest | None = None,
              protocol_cfg: ProtocolConfig | None = None) -> TrainedRun:
    forest = forest or make_forest(cfg)
    dp = cfg.dp_config()
    txs = datagen.derive_features(train_txs)
    subsets = training_subsets(txs, forest.tau, dp, cfg.run.seed, cfg.dp.oversample_ratio)
    fed = setup(forest, accounts, protocol_cfg or cfg.protocol_config(), dp,
                cfg.routing_table(len(accounts)))
    before = hecore.counters.snapshot()
    green = train_federated(fed, subsets)
    phases = {"train": op_delta(before, hecore.counters.snapshot())}
    return TrainedRun(forest, fed, subsets, green, phases)


def predict(fed: Federation, txs: Sequence[Transaction]) -> list[dict]:
    """One row per transaction: label, confidence, and the share of trees voting 1."""
    rows = []
    for tx in datagen.derive_features(txs):
        label, conf, per_tree = pns_infer(fed, tx)
        rows.append({"tx_id": tx.tx_id, "label": label, "confidence": conf,
                     "score": sum(per_tree) / len(per_tree), "tree_labels": per_tree})
    return rows


def warn_oversampling(cfg: RunConfig, txs: Sequence[Transaction]) -> str | None:
    if cfg.dp.enabled and cfg.dp.oversample_ratio > 1:
        worst = max_multiplicity(txs)
        if cfg.dp.oversample_ratio * min(worst, cfg.dp.bound) > cfg.dp.bound:
            return ("oversampled duplicates can push an account past dp.bound; "
                    "the sensitivity argument then no longer holds")
    return None


def save_model(run: TrainedRun, cfg: RunConfig, out: str | Path) -> Path:
    """PNS side: forest, green labels and key. Bank side: label ciphertexts only."""
    out = Path(out)
    (out / "banks").mkdir(parents=True, exist_ok=True)
    (out / "pns").mkdir(exist_ok=True)
    _dump(out / "forest.json", forest_to_dict(run.forest, run.green_labels))
    sk = run.fed.pns._secret_key
    _dump(out / "pns" / "secret_key.json", {"key_id": sk.key_id})
    _dump(out / "public.json", {"key_id": sk.key_id, "num_bins": run.fed.pns.num_bins,
                                "n_banks": len(run.fed.banks), "config": cfg.to_ini()})
    for bank in run.fed.banks:
        _dump(out / "banks" / f"{bank.name}.json", bank.label_store())
    run.fed.net.export_jsonl(out / "transcript.jsonl")
    _dump(out / "cost_report.json", run.cost_report().to_dict())
    return out


def load_federation(model_dir: str | Path, cfg: RunConfig,
                    accounts: Sequence[Sequence[AccountRecord]]) -> Federation:
    model_dir = Path(model_dir)
    forest, green = forest_from_dict(_load(model_dir / "forest.json"))
    params = cfg.he_params()
    key_id = _load(model_dir / "pns" / "secret_key.json")["key_id"]
    keys = KeyPair(SecretKey(key_id, params), PublicKey(key_id, params))
    fed = setup(forest, accounts, cfg.protocol_config(), cfg.dp_config(),
                cfg.routing_table(len(accounts)), keys)
    fed.pns.green_labels = green
    for bank in fed.banks:
        store = _load(model_dir / "banks" / f"{bank.name}.json")
        bank.labels = {lid: Ciphertext.from_dict(d, params) for lid, d in store.items()}
    return fed


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _load(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))
