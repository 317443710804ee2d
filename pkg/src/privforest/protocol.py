"""PNS, bank and aggregator roles for federated training and inference.

All cross-party traffic goes through a :class:`SimNet`. Each training round
handles one red leaf: PNS sends the two encrypted tables to every bank, each
bank returns noisy encrypted counts to the aggregator, the aggregator returns
the sums to every bank, and every bank stores ``[[N1 > N0]]`` as that leaf's
label. Only the PNS object ever holds the secret key.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import hecore, pisum
from .datagen import AccountRecord, bank_prefix
from .dpmech import DpConfig, add_dp_noise, noise_rng
from .errors import KeyMismatch, NoResponse, NoRoute, ProtocolViolation, UnknownLeafId
from .forest import (Blocked, Forest, Leaf, candidate_leaves, classify_leaves, filter_tx,
                     green_label, green_leaf_stats, majority_vote)
from .hecore import BitCiphertext, Ciphertext, DecryptEvent, HeParams, KeyPair, PublicKey
from .simnet import SimNet, shape_of

PNS_NAME = "pns"
AGG_NAME = "aggregator"


def bank_name(j: int) -> str:
    return f"bank{j + 1}"


@dataclass(frozen=True)
class ProtocolConfig:
    sigma: int = 16
    num_bins: int | None = None  # None: sized from PNS unique accounts
    hashes: int = 3
    max_evictions: int = 500
    id_mode: str = "index"
    he: HeParams = field(default_factory=HeParams)
    seed: int = 0

    def codec(self, n_banks: int) -> pisum.IdCodec:
        return pisum.IdCodec(self.sigma, tuple(bank_prefix(j) for j in range(n_banks)),
                             self.id_mode)


class RoutingTable:
    """Longest-prefix map from account id to bank index, with optional broadcast."""

    def __init__(self, prefix_map: Mapping[str, int], n_banks: int,
                 broadcast_fallback: bool = False):
        self.prefix_map = dict(prefix_map)
        self.n_banks = n_banks
        self.broadcast_fallback = broadcast_fallback

    @classmethod
    def default(cls, n_banks: int, broadcast_fallback: bool = False) -> "RoutingTable":
        return cls({bank_prefix(j): j for j in range(n_banks)}, n_banks, broadcast_fallback)

    def route(self, account_id: str) -> list[int]:
        best = None
        for prefix, j in self.prefix_map.items():
            if account_id.startswith(prefix) and (best is None or len(prefix) > len(best)):
                best = prefix
        if best is not None:
            return [self.prefix_map[best]]
        if self.broadcast_fallback:
            return list(range(self.n_banks))
        raise NoRoute(f"no bank prefix matches {account_id!r}")


@dataclass(frozen=True)
class LeafBundle:
    leaf_id: str
    ordinal: int
    flag: str
    tables: tuple[pisum.EncTable, pisum.EncTable]


@dataclass(frozen=True)
class InferQuery:
    query_id: int
    account: BitCiphertext
    candidates: tuple[tuple[str, str], ...]  # (leaf_id, flag)


def _ct_bytes(params: HeParams, n: int) -> int:
    return n * params.slot_count * 8


class Party:
    def __init__(self, name: str, pk: PublicKey):
        self.name = name
        self.public_key = pk
        self._secret_key = None

    def decrypt(self, ct: Ciphertext, net: SimNet | None = None) -> np.ndarray:
        if self._secret_key is None:
            key_id = ct.key_id
            hecore.audit.record(DecryptEvent(self.name, key_id, False))
            raise ProtocolViolation(f"{self.name} holds no secret key")
        try:
            out = hecore.decrypt(self._secret_key, ct, party=self.name)
        except KeyMismatch as exc:
            raise ProtocolViolation(str(exc)) from exc
        if net is not None:
            net.log_local(self.name, "decrypt")
        return out


def bank_partition_by_flag(accounts: Iterable[AccountRecord]) -> dict[str, list[str]]:
    out: dict[str, list[str]] = defaultdict(list)
    for r in accounts:
        out[r.flag].append(r.account_id)
    return dict(out)


def leaf_account_counts(forest: Forest, subsets: Sequence[Sequence]) -> dict[str, tuple[dict, dict]]:
    """Acc^0[L] and Acc^1[L] for every red leaf, from each tree's own subset.

    A transaction counts towards red leaf L exactly when it is blocked at L's
    bank node and L is its candidate leaf for L's flag, which is the same as
    passing every PNS test on L's path.
    """
    feats = forest.features
    out = {leaf.leaf_id: ({}, {}) for leaf in classify_leaves(forest)[1]}
    for tree, subset in zip(forest.trees, subsets):
        for tx in subset:
            reached = filter_tx(tx, tree, feats)
            if not isinstance(reached, Blocked):
                continue
            acct = getattr(tx, reached.feature.account_field)
            for leaf in candidate_leaves(reached.node, tx, feats):
                counts = out[leaf.leaf_id][tx.label]
                counts[acct] = counts.get(acct, 0) + 1
    return out


def unique_pns_accounts(txs: Iterable) -> int:
    """Larger of the distinct ordering and beneficiary account counts."""
    txs = list(txs)
    return max(len({tx.ordering_account for tx in txs}),
               len({tx.beneficiary_account for tx in txs}), 1)


class Pns(Party):
    def __init__(self, forest: Forest, keys: KeyPair, cfg: ProtocolConfig, codec: pisum.IdCodec):
        super().__init__(PNS_NAME, keys.public_key)
        self._secret_key = keys.secret_key
        self.forest = forest
        self.cfg = cfg
        self.codec = codec
        self.green_labels: dict[str, int] = {}
        self.num_bins = cfg.num_bins
        self._qid = 0

    def train_green(self, subsets: Sequence[Sequence]) -> dict[str, int]:
        for tree, subset in zip(self.forest.trees, subsets):
            stats = green_leaf_stats(tree, subset, self.forest.features)
            self.green_labels.update({lid: green_label(s) for lid, s in stats.items()})
        return self.green_labels

    def prepare_training(self, subsets: Sequence[Sequence]) -> Iterator[LeafBundle]:
        """Yield one encrypted bundle per red leaf, built lazily to bound memory."""
        if self.num_bins is None:
            self.num_bins = pisum.default_num_bins(unique_pns_accounts(
                tx for s in subsets for tx in s))
        counts = leaf_account_counts(self.forest, subsets)
        red = classify_leaves(self.forest)[1]
        for ordinal, leaf in enumerate(red):
            tables = []
            for label in (0, 1):
                rng = np.random.default_rng([self.cfg.seed, ordinal, label])
                table = pisum.build_account_table(counts[leaf.leaf_id][label], self.codec,
                                                  self.num_bins, self.cfg.hashes,
                                                  self.cfg.max_evictions, rng)
                tables.append(pisum.pad_and_encrypt(table, self.public_key, self.codec, rng))
            yield LeafBundle(leaf.leaf_id, ordinal, leaf.bank_flag, (tables[0], tables[1]))

    def tree_query(self, tx, tree_index: int) -> tuple[int | None, Blocked | None]:
        tree = self.forest.trees[tree_index]
        reached = filter_tx(tx, tree, self.forest.features)
        if isinstance(reached, Leaf):
            return self.green_labels.get(reached.leaf_id, 0), None
        return None, reached

    def make_query(self, tx, blocked: Blocked) -> tuple[str, InferQuery]:
        account = getattr(tx, blocked.feature.account_field)
        cands = candidate_leaves(blocked.node, tx, self.forest.features)
        bits = hecore.encrypt_bits(self.public_key, [self.codec.encode(account)], self.cfg.sigma)
        self._qid += 1
        return account, InferQuery(self._qid, bits,
                                   tuple((leaf.leaf_id, leaf.bank_flag) for leaf in cands))


class Bank(Party):
    def __init__(self, index: int, accounts: Sequence[AccountRecord], pk: PublicKey,
                 codec: pisum.IdCodec, dp: DpConfig):
        super().__init__(bank_name(index), pk)
        self.index = index
        self.codec = codec
        self.dp = dp
        self.partitions = bank_partition_by_flag(accounts)
        self._codes = {flag: codec.encode_many(sorted(ids)) for flag, ids in self.partitions.items()}
        self.labels: dict[str, Ciphertext] = {}

    def handle_tables(self, net: SimNet) -> None:
        msg = net.recv(self.name, src=PNS_NAME, kind="pisum_tables")
        if msg is None:
            raise NoResponse(f"{self.name} expected a table bundle")
        bundle: LeafBundle = msg.payload
        accounts = self.partitions.get(bundle.flag, [])
        sums = pisum.bank_intersection_sum(bundle.tables, accounts, self.codec, self.public_key)
        noisy = []
        for label, ct in enumerate(sums):
            noisy.append(add_dp_noise(ct, self.dp, noise_rng(self.dp, self.index,
                                                             bundle.ordinal, label)))
            if self.dp.enabled:
                net.log_local(self.name, "dp_noise")
        net.send(self.name, AGG_NAME, "noisy_counts", (bundle.leaf_id, *noisy),
                 shape_of({"ct": 2}, nbytes=_ct_bytes(self.public_key.params, 2)))

    def handle_sums(self, net: SimNet) -> None:
        msg = net.recv(self.name, src=AGG_NAME, kind="sum_counts")
        if msg is None:
            raise NoResponse(f"{self.name} expected aggregated counts")
        leaf_id, n0, n1 = msg.payload
        self.labels[leaf_id] = hecore.he_compare(n1, n0)

    def answer(self, query: InferQuery) -> Ciphertext:
        """chi = sum_p (sum_i PET([[a*]], a_i with flag_p)) * [[Label(L_p)]]."""
        params = self.public_key.params
        sigma = query.account.width
        per_chunk = params.slot_count // sigma
        filler = hecore.int_to_bits([(1 << sigma) - 1], sigma)
        chi = None
        label_depth = 0
        for leaf_id, flag in query.candidates:
            if leaf_id not in self.labels:
                raise UnknownLeafId(f"{self.name} holds no label for {leaf_id}")
            label = self.labels[leaf_id]
            label_depth = max(label_depth, label.depth)
            codes = self._codes.get(flag)
            if codes is None or codes.size == 0:
                continue
            copies = min(per_chunk, codes.size)
            rep = hecore.he_replicate(query.account, copies)
            for lo in range(0, codes.size, per_chunk):
                part = codes[lo: lo + per_chunk]
                rows = np.tile(filler, (copies, 1))
                rows[: part.size] = hecore.int_to_bits(part, sigma)
                hits = hecore.he_sum_slots(hecore.pet(rep, rows))
                term = hecore.he_mul(hits, label)
                chi = term if chi is None else hecore.he_add(chi, term)
        pet_out = hecore.planned_depth(params, [1] * hecore.pet_depth(sigma))
        target = hecore.planned_depth(params, [1], start=max(pet_out, label_depth))
        if chi is None:
            chi = hecore.encrypt(self.public_key, [0.0])
        return hecore.mod_switch(chi, target) if chi.depth < target else chi

    def handle_query(self, net: SimNet) -> None:
        msg = net.recv(self.name, src=PNS_NAME, kind="infer_query")
        if msg is None:
            raise NoResponse(f"{self.name} expected a query")
        chi = self.answer(msg.payload)
        net.send(self.name, PNS_NAME, "infer_answer", (msg.payload.query_id, chi),
                 shape_of({"ct": 1}, nbytes=_ct_bytes(self.public_key.params, 1)))

    def label_store(self) -> dict[str, dict]:
        return {lid: ct.to_dict() for lid, ct in sorted(self.labels.items())}


class Aggregator(Party):
    def __init__(self, pk: PublicKey):
        super().__init__(AGG_NAME, pk)

    def handle_round(self, net: SimNet, bank_names: Sequence[str]) -> None:
        total0 = total1 = None
        leaf_id = None
        for name in bank_names:
            msg = net.recv(self.name, src=name, kind="noisy_counts")
            if msg is None:
                raise NoResponse(f"aggregator got nothing from {name}")
            lid, c0, c1 = msg.payload
            if leaf_id is not None and lid != leaf_id:
                raise ProtocolViolation(f"round mixes leaves {leaf_id} and {lid}")
            leaf_id = lid
            total0 = c0 if total0 is None else hecore.he_add(total0, c0)
            total1 = c1 if total1 is None else hecore.he_add(total1, c1)
        net.send(self.name, list(bank_names), "sum_counts", (leaf_id, total0, total1),
                 shape_of({"ct": 2}, nbytes=_ct_bytes(self.public_key.params, 2)))


@dataclass
class Federation:
    """All parties of one run plus the bus connecting them."""

    pns: Pns
    banks: list[Bank]
    aggregator: Aggregator
    net: SimNet
    routing: RoutingTable

    @property
    def bank_names(self) -> list[str]:
        return [b.name for b in self.banks]

    def bank(self, j: int) -> Bank:
        name = bank_name(j)
        for b in self.banks:
            if b.name == name:
                return b
        raise NoResponse(f"{name} is not part of this simulation")


def setup(forest: Forest, account_tables: Sequence[Sequence[AccountRecord]],
          cfg: ProtocolConfig | None = None, dp: DpConfig | None = None,
          routing: RoutingTable | None = None, keys: KeyPair | None = None,
          net: SimNet | None = None) -> Federation:
    cfg = cfg or ProtocolConfig()
    dp = dp or DpConfig()
    keys = keys or hecore.keygen(cfg.he, np.random.default_rng([cfg.seed, 0x6B6579]))
    codec = cfg.codec(len(account_tables))
    net = net or SimNet()
    for name in [PNS_NAME] + [bank_name(j) for j in range(len(account_tables))] + [AGG_NAME]:
        net.register(name)
    pns = Pns(forest, keys, cfg, codec)
    banks = [Bank(j, table, keys.public_key, codec, dp) for j, table in enumerate(account_tables)]
    routing = routing or RoutingTable.default(len(account_tables))
    return Federation(pns, banks, Aggregator(keys.public_key), net, routing)


def run_get_private_labels(fed: Federation, subsets: Sequence[Sequence]) -> int:
    """Label every red leaf, one leaf per round; returns the number of rounds."""
    fed.net.phase = "train"
    rounds = 0
    for bundle in fed.pns.prepare_training(subsets):
        n_ct = sum(t.n_ciphertexts for t in bundle.tables)
        shape = shape_of({"ct": n_ct}, dims=list(bundle.tables[0].dims),
                         nbytes=_ct_bytes(fed.pns.public_key.params, n_ct))
        fed.net.send(PNS_NAME, fed.bank_names, "pisum_tables", bundle, shape)
        for bank in fed.banks:
            bank.handle_tables(fed.net)
        fed.aggregator.handle_round(fed.net, fed.bank_names)
        for bank in fed.banks:
            bank.handle_sums(fed.net)
        rounds += 1
    return rounds


def train_federated(fed: Federation, subsets: Sequence[Sequence]) -> dict[str, int]:
    """Green labels at PNS, then encrypted red labels at every bank."""
    if len(subsets) != fed.pns.forest.tau:
        raise ValueError("need one training subset per tree")
    green = fed.pns.train_green(subsets)
    run_get_private_labels(fed, subsets)
    return green


def pns_infer(fed: Federation, tx) -> tuple[int, float, list[int]]:
    """Majority label, its confidence and the per-tree labels for one transaction."""
    fed.net.phase = "infer"
    pns = fed.pns
    tree_labels = []
    for t in range(pns.forest.tau):
        label, blocked = pns.tree_query(tx, t)
        if blocked is None:
            tree_labels.append(label)
            continue
        account, query = pns.make_query(tx, blocked)
        targets = [fed.bank(j) for j in fed.routing.route(account)]
        shape = shape_of({"ct_bits": 1, "leaf_ref": len(query.candidates)},
                         dims=[query.account.width],
                         nbytes=_ct_bytes(pns.public_key.params, 1))
        fed.net.send(PNS_NAME, [b.name for b in targets], "infer_query", query, shape)
        total = None
        for bank in targets:
            bank.handle_query(fed.net)
            msg = fed.net.recv(PNS_NAME, src=bank.name, kind="infer_answer")
            if msg is None:
                raise NoResponse(f"{bank.name} did not answer")
            qid, chi = msg.payload
            if qid != query.query_id:
                raise ProtocolViolation("answer does not match the open query")
            total = chi if total is None else hecore.he_add(total, chi)
        value = pns.decrypt(total, fed.net)[0]
        tree_labels.append(int(round(value)))
    label, conf = majority_vote(tree_labels, pns.forest.tau)
    return label, conf, tree_labels


def decrypt_red_labels(fed: Federation, bank_index: int = 0) -> dict[str, int]:
    """Test helper: PNS decrypts one bank's stored labels (never part of a real run)."""
    bank = fed.banks[bank_index]
    return {lid: int(round(hecore.decrypt(fed.pns._secret_key, ct, party=PNS_NAME)[0]))
            for lid, ct in bank.labels.items()}
