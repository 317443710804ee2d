"""Random decision trees: structure, leaf colouring, traversal and plaintext labelling.

Tree structure is drawn from the feature schema alone. A leaf is *green* when
its root path only tests PNS features and *red* when the path crosses one
bank-owned feature (an account flag). Below a bank feature only PNS features
may be drawn, so a path never holds more than one bank test.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import EmptyFeaturePool, MalformedTransaction, MinOneTree

PNS = "pns"
BANK = "bank"


@dataclass(frozen=True)
class FeatureSpec:
    id: str
    owner: str
    kind: str
    domain: tuple = ()
    lo: float = 0.0
    hi: float = 1.0
    account_field: str | None = None

    def __post_init__(self):
        if self.owner not in (PNS, BANK):
            raise ValueError(f"unknown owner {self.owner!r}")
        if self.kind == "categorical":
            if not self.domain:
                raise ValueError(f"categorical feature {self.id} needs a non-empty domain")
        elif self.kind == "numeric":
            if not self.lo < self.hi:
                raise ValueError(f"numeric feature {self.id} needs lo < hi")
        else:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.owner == BANK and (self.kind != "categorical" or not self.account_field):
            raise ValueError("bank features are categorical flags bound to an account field")

    @classmethod
    def categorical(cls, id, domain, owner=PNS, account_field=None):
        return cls(id, owner, "categorical", tuple(domain), account_field=account_field)

    @classmethod
    def numeric(cls, id, lo, hi):
        return cls(id, PNS, "numeric", lo=float(lo), hi=float(hi))

    def to_dict(self) -> dict:
        d = {"id": self.id, "owner": self.owner, "kind": self.kind}
        if self.kind == "categorical":
            d["domain"] = list(self.domain)
        else:
            d["lo"], d["hi"] = self.lo, self.hi
        if self.account_field:
            d["account_field"] = self.account_field
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureSpec":
        return cls(d["id"], d["owner"], d["kind"], tuple(d.get("domain", ())),
                   d.get("lo", 0.0), d.get("hi", 1.0), d.get("account_field"))


DEFAULT_FLAGS = ("00", "01", "99")


def default_pns_features() -> list[FeatureSpec]:
    return [
        FeatureSpec.categorical("currency", ("USD", "EUR", "GBP", "JPY")),
        FeatureSpec.numeric("amount", 0, 1_000_000),
        FeatureSpec.numeric("hour", 0, 24),
        FeatureSpec.numeric("pair_freq", 1, 8),
        FeatureSpec.numeric("out_degree", 1, 12),
    ]


def default_bank_features(flags: Sequence[str] = DEFAULT_FLAGS) -> list[FeatureSpec]:
    return [
        FeatureSpec.categorical("ordering_flag", flags, BANK, "ordering_account"),
        FeatureSpec.categorical("beneficiary_flag", flags, BANK, "beneficiary_account"),
    ]


@dataclass(frozen=True)
class TestSpec:
    feature_id: str
    op: str  # "eq", "lt" or "ge"
    value: object

    __test__ = False  # keep pytest from collecting this as a test class

    def passes(self, v) -> bool:
        if self.op == "eq":
            return v == self.value
        if self.op == "lt":
            return v < self.value
        return v >= self.value

    def to_dict(self) -> dict:
        return {"feature": self.feature_id, "op": self.op, "value": self.value}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TestSpec":
        return cls(d["feature"], d["op"], d["value"])


@dataclass(frozen=True)
class Leaf:
    leaf_id: str
    tests: tuple[TestSpec, ...]
    bank_feature: str | None = None
    bank_flag: str | None = None

    @property
    def kind(self) -> str:
        return "red" if self.bank_feature else "green"

    def pns_tests(self) -> tuple[TestSpec, ...]:
        """tests(L) without the test on the bank feature."""
        return tuple(t for t in self.tests if t.feature_id != self.bank_feature)


@dataclass(frozen=True)
class Node:
    feature_id: str
    edges: tuple[tuple[TestSpec, "TreeItem"], ...]


TreeItem = Union[Node, Leaf]


@dataclass(frozen=True)
class Blocked:
    node: Node
    feature: FeatureSpec


@dataclass
class LeafStats:
    n0: int = 0
    n1: int = 0

    def add(self, label: int, weight: int = 1) -> None:
        if label:
            self.n1 += weight
        else:
            self.n0 += weight


@dataclass(frozen=True)
class Tree:
    index: int
    height: int
    root: TreeItem

    @cached_property
    def leaves(self) -> tuple[Leaf, ...]:
        out, stack = [], [self.root]
        # breadth-first so leaf order matches leaf-id numbering
        while stack:
            nxt = []
            for item in stack:
                if isinstance(item, Leaf):
                    out.append(item)
                else:
                    nxt.extend(child for _, child in item.edges)
            stack = nxt
        return tuple(out)


@dataclass(frozen=True)
class Forest:
    trees: tuple[Tree, ...]
    seed: int
    tau: int
    height: int
    pns_features: tuple[FeatureSpec, ...]
    bank_features: tuple[FeatureSpec, ...]

    @cached_property
    def features(self) -> dict[str, FeatureSpec]:
        return {f.id: f for f in self.pns_features + self.bank_features}

    @cached_property
    def leaf_index(self) -> dict[str, Leaf]:
        return {leaf.leaf_id: leaf for tree in self.trees for leaf in tree.leaves}

    def leaves(self) -> list[Leaf]:
        return [leaf for tree in self.trees for leaf in tree.leaves]

    def to_json(self, green_labels: Mapping[str, int] | None = None) -> str:
        return json.dumps(forest_to_dict(self, green_labels), sort_keys=True,
                          separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Forest":
        return forest_from_dict(json.loads(text))[0]


def _edge_tests(feat: FeatureSpec, rng: np.random.Generator) -> list[TestSpec]:
    if feat.kind == "categorical":
        return [TestSpec(feat.id, "eq", v) for v in feat.domain]
    threshold = float(rng.uniform(feat.lo, feat.hi))
    return [TestSpec(feat.id, "lt", threshold), TestSpec(feat.id, "ge", threshold)]


def build_tree(rng: np.random.Generator, pns_features: Sequence[FeatureSpec],
               bank_features: Sequence[FeatureSpec], height: int, index: int = 0) -> Tree:
    """Draw one random decision tree of the given height, level by level.

    A node with no bank-feature ancestor draws uniformly from all conditions;
    below a bank feature only PNS conditions are eligible.
    """
    if height < 1:
        raise ValueError("tree height must be >= 1")
    pns_features, bank_features = list(pns_features), list(bank_features)
    everything = pns_features + bank_features

    root = {"tests": (), "bank": None}
    frontier = [root]
    for _ in range(height):
        nxt = []
        for slot in frontier:
            pool = pns_features if slot["bank"] else everything
            if not pool:
                raise EmptyFeaturePool("no condition left to draw for this node")
            feat = pool[int(rng.integers(len(pool)))]
            bank = slot["bank"] or (feat if feat.owner == BANK else None)
            slot["feature"] = feat.id
            slot["edges"] = []
            for test in _edge_tests(feat, rng):
                child = {"tests": slot["tests"] + (test,), "bank": bank}
                slot["edges"].append((test, child))
                nxt.append(child)
        frontier = nxt

    for k, slot in enumerate(frontier):
        bank = slot["bank"]
        flag = None
        if bank is not None:
            flag = next(t.value for t in slot["tests"] if t.feature_id == bank.id)
        slot["leaf"] = Leaf(f"T{index}L{k}", slot["tests"], bank.id if bank else None, flag)

    def freeze(slot) -> TreeItem:
        if "leaf" in slot:
            return slot["leaf"]
        return Node(slot["feature"], tuple((t, freeze(c)) for t, c in slot["edges"]))

    return Tree(index, height, freeze(root))


def build_forest(seed: int, tau: int, height: int, pns_features: Sequence[FeatureSpec],
                 bank_features: Sequence[FeatureSpec]) -> Forest:
    if tau < 1:
        raise MinOneTree("a forest needs at least one tree")
    streams = np.random.SeedSequence(seed).spawn(tau)
    trees = tuple(build_tree(np.random.default_rng(s), pns_features, bank_features, height, t)
                  for t, s in enumerate(streams))
    return Forest(trees, seed, tau, height, tuple(pns_features), tuple(bank_features))


def classify_leaves(forest: Forest) -> tuple[list[Leaf], list[Leaf]]:
    green, red = [], []
    for leaf in forest.leaves():
        (red if leaf.bank_feature else green).append(leaf)
    return green, red


def feature_value(tx, feature_id: str):
    try:
        v = tx.value(feature_id) if hasattr(tx, "value") else tx.get(feature_id)
    except (AttributeError, KeyError):
        v = None
    if v is None:
        raise MalformedTransaction(f"transaction lacks feature {feature_id!r}")
    return v


def _follow(node: Node, v) -> TreeItem:
    for test, child in node.edges:
        if test.passes(v):
            return child
    raise MalformedTransaction(f"value {v!r} passes no edge test on {node.feature_id}")


def filter_tx(tx, tree: Tree, features: Mapping[str, FeatureSpec]) -> Leaf | Blocked:
    """Walk ``tx`` down ``tree`` using PNS features; stop at the first bank node."""
    item = tree.root
    while isinstance(item, Node):
        feat = features[item.feature_id]
        if feat.owner == BANK:
            return Blocked(item, feat)
        item = _follow(item, feature_value(tx, item.feature_id))
    return item


def candidate_leaves(node: Node, tx, features: Mapping[str, FeatureSpec]) -> list[Leaf]:
    """Leaves under a bank node that ``tx`` reaches for some value of the bank flag."""
    out = []
    for _, child in node.edges:
        item = child
        while isinstance(item, Node):
            item = _follow(item, feature_value(tx, item.feature_id))
        out.append(item)
    return out


def candidate_transactions(leaf: Leaf, txs: Iterable, label: int) -> list:
    tests = leaf.pns_tests()
    return [tx for tx in txs if tx.label == label
            and all(t.passes(feature_value(tx, t.feature_id)) for t in tests)]


def candidate_accounts(leaf: Leaf, cand_txs: Iterable,
                       features: Mapping[str, FeatureSpec]) -> dict[str, int]:
    field_name = features[leaf.bank_feature].account_field
    return dict(Counter(getattr(tx, field_name) for tx in cand_txs))


def green_label(stats: LeafStats) -> int:
    return 0 if stats.n0 >= stats.n1 else 1


def majority_vote(labels: Sequence[int], tau: int | None = None) -> tuple[int, float]:
    n = len(labels)
    if n < 1 or (tau is not None and tau != n):
        raise ValueError(f"expected {tau} tree labels, got {n}")
    ones = int(sum(labels))
    if ones > n - ones:
        return 1, ones / n
    return 0, (n - ones) / n


def green_leaf_stats(tree: Tree, txs: Iterable,
                     features: Mapping[str, FeatureSpec]) -> dict[str, LeafStats]:
    stats = {leaf.leaf_id: LeafStats() for leaf in tree.leaves if leaf.kind == "green"}
    for tx in txs:
        reached = filter_tx(tx, tree, features)
        if isinstance(reached, Leaf):
            stats[reached.leaf_id].add(tx.label)
    return stats


def _per_tree(forest: Forest, txs) -> list:
    if txs and isinstance(txs[0], (list, tuple)):
        if len(txs) != forest.tau:
            raise ValueError("need one transaction subset per tree")
        return list(txs)
    return [txs] * forest.tau


def merge_accounts(account_tables: Iterable) -> dict[str, str]:
    """Account id -> flag from per-bank mappings or per-bank lists of account records."""
    merged: dict[str, str] = {}
    for table in account_tables:
        if isinstance(table, Mapping):
            merged.update(table)
        else:
            merged.update((r.account_id, r.flag) for r in table)
    return merged


def joined_leaf(tx, tree: Tree, features: Mapping[str, FeatureSpec],
                flags: Mapping[str, str]) -> Leaf | None:
    """Plaintext traversal with bank flags joined in; None if the account is unknown."""
    item = tree.root
    while isinstance(item, Node):
        feat = features[item.feature_id]
        if feat.owner == BANK:
            flag = flags.get(getattr(tx, feat.account_field))
            if flag is None:
                return None
            item = _follow(item, flag)
        else:
            item = _follow(item, feature_value(tx, item.feature_id))
    return item


def central_oracle_train(forest: Forest, txs, account_tables) -> dict[str, int]:
    """Label every leaf as a trusted party holding all plaintext data would.

    ``txs`` is either one transaction list or a per-tree list of subsets.
    ``account_tables`` maps account id -> flag (one mapping per bank, or merged).
    """
    if isinstance(account_tables, Mapping):
        flags = dict(account_tables)
    else:
        flags = merge_accounts(account_tables)
    labels = {}
    for tree, subset in zip(forest.trees, _per_tree(forest, txs)):
        stats = {leaf.leaf_id: LeafStats() for leaf in tree.leaves}
        for tx in subset:
            leaf = joined_leaf(tx, tree, forest.features, flags)
            if leaf is not None:
                stats[leaf.leaf_id].add(tx.label)
        labels.update({lid: green_label(s) for lid, s in stats.items()})
    return labels


def oracle_tree_labels(forest: Forest, labels: Mapping[str, int], tx,
                       flags: Mapping[str, str]) -> list[int]:
    out = []
    for tree in forest.trees:
        leaf = joined_leaf(tx, tree, forest.features, flags)
        out.append(0 if leaf is None else labels[leaf.leaf_id])
    return out


def _item_to_dict(item: TreeItem, green_labels) -> dict:
    if isinstance(item, Leaf):
        d = {"leaf_id": item.leaf_id, "kind": item.kind}
        if item.bank_feature:
            d["bank_feature"] = item.bank_feature
            d["bank_flag"] = item.bank_flag
        elif green_labels is not None and item.leaf_id in green_labels:
            d["label"] = int(green_labels[item.leaf_id])
        return d
    return {"feature": item.feature_id,
            "edges": [{"test": t.to_dict(), "child": _item_to_dict(c, green_labels)}
                      for t, c in item.edges]}


def forest_to_dict(forest: Forest, green_labels: Mapping[str, int] | None = None) -> dict:
    return {
        "seed": forest.seed,
        "tau": forest.tau,
        "height": forest.height,
        "features": {"pns": [f.to_dict() for f in forest.pns_features],
                     "bank": [f.to_dict() for f in forest.bank_features]},
        "trees": [{"index": t.index, "height": t.height,
                   "root": _item_to_dict(t.root, green_labels)} for t in forest.trees],
    }


def forest_from_dict(d: Mapping) -> tuple[Forest, dict[str, int]]:
    """Inverse of :func:`forest_to_dict`; also returns any inline green labels."""
    labels: dict[str, int] = {}

    def load(item, tests) -> TreeItem:
        if "leaf_id" in item:
            if "label" in item:
                labels[item["leaf_id"]] = int(item["label"])
            return Leaf(item["leaf_id"], tests, item.get("bank_feature"), item.get("bank_flag"))
        edges = []
        for e in item["edges"]:
            t = TestSpec.from_dict(e["test"])
            edges.append((t, load(e["child"], tests + (t,))))
        return Node(item["feature"], tuple(edges))

    trees = tuple(Tree(t["index"], t["height"], load(t["root"], ())) for t in d["trees"])
    forest = Forest(trees, d["seed"], d["tau"], d["height"],
                    tuple(FeatureSpec.from_dict(f) for f in d["features"]["pns"]),
                    tuple(FeatureSpec.from_dict(f) for f in d["features"]["bank"]))
    return forest, labels
