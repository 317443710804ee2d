"""Run configuration: an INI-style key-value file, validated before any run.

Example::

    [run]
    seed = 7

    [forest]
    tau = 6
    height = 4

    [dp]
    enabled = true
    epsilon = 1.0
    bound = 5

Every key has a default; unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

from .dpmech import DpConfig
from .errors import ConfigError
from .hecore import HeParams
from .protocol import ProtocolConfig, RoutingTable


@dataclass(frozen=True)
class RunSection:
    seed: int = 0


@dataclass(frozen=True)
class DataSection:
    banks: int = 3
    accounts_per_bank: int = 200
    transactions: int = 500
    test_transactions: int = 200
    anomaly_rate: float = 0.05
    flag_probs: str = "00:0.6,01:0.3,99:0.1"
    suspicious_flag: str = "99"
    amount_threshold: float = 500_000.0
    homophily: float = 0.95
    leak: float = 0.005


@dataclass(frozen=True)
class ForestSection:
    tau: int = 6
    height: int = 4
    seed: int = -1  # -1 means use run.seed


@dataclass(frozen=True)
class HeSection:
    sigma_bits: int = 16
    depth_budget: int = 6
    slot_count: int = 32768
    compare_depth: int = 3


@dataclass(frozen=True)
class CuckooSection:
    num_bins: int = 0  # 0 means sized from PNS unique accounts
    hashes: int = 3
    max_evictions: int = 500
    id_mode: str = "index"


@dataclass(frozen=True)
class DpSection:
    enabled: bool = False
    epsilon: float = 1.0
    bound: int = 5
    seed: int = 0
    oversample_ratio: float = 1.0


@dataclass(frozen=True)
class RoutingSection:
    prefix_map: str = ""  # "B1-:0,B2-:1"; empty means one prefix per generated bank
    broadcast_fallback: bool = False


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    forest: ForestSection = field(default_factory=ForestSection)
    he: HeSection = field(default_factory=HeSection)
    cuckoo: CuckooSection = field(default_factory=CuckooSection)
    dp: DpSection = field(default_factory=DpSection)
    routing: RoutingSection = field(default_factory=RoutingSection)

    @property
    def forest_seed(self) -> int:
        return self.run.seed if self.forest.seed < 0 else self.forest.seed

    def flag_probs(self) -> dict[str, float]:
        out = {}
        for item in filter(None, (s.strip() for s in self.data.flag_probs.split(","))):
            flag, _, p = item.partition(":")
            out[flag.strip()] = float(p)
        return out

    def he_params(self) -> HeParams:
        return HeParams(slot_count=self.he.slot_count, depth_budget=self.he.depth_budget,
                        compare_depth=self.he.compare_depth)

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig(sigma=self.he.sigma_bits, num_bins=self.cuckoo.num_bins or None,
                              hashes=self.cuckoo.hashes, max_evictions=self.cuckoo.max_evictions,
                              id_mode=self.cuckoo.id_mode, he=self.he_params(), seed=self.run.seed)

    def dp_config(self) -> DpConfig:
        return DpConfig(self.dp.epsilon, self.dp.bound, self.dp.enabled, self.dp.seed)

    def routing_table(self, n_banks: int) -> RoutingTable:
        if not self.routing.prefix_map.strip():
            return RoutingTable.default(n_banks, self.routing.broadcast_fallback)
        mapping = {}
        for item in self.routing.prefix_map.split(","):
            prefix, _, j = item.strip().rpartition(":")
            mapping[prefix] = int(j)
        return RoutingTable(mapping, n_banks, self.routing.broadcast_fallback)

    def to_ini(self) -> str:
        lines = []
        for sec in fields(self):
            lines.append(f"[{sec.name}]")
            part = getattr(self, sec.name)
            for f in fields(part):
                v = getattr(part, f.name)
                lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
            lines.append("")
        return "\n".join(lines)


def _convert(raw: str, typ, where: str):
    try:
        if typ in (bool, "bool"):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def _section_types(section_cls) -> dict[str, object]:
    return {f.name: f.type for f in fields(section_cls)}


def apply_overrides(cfg: RunConfig, values: Mapping[str, Mapping[str, str]]) -> RunConfig:
    """Overlay raw string values given as {section: {key: value}}."""
    known = {f.name: f for f in fields(RunConfig)}
    for sec_name, items in values.items():
        if sec_name not in known:
            raise ConfigError(f"unknown section [{sec_name}]")
        part = getattr(cfg, sec_name)
        types = _section_types(type(part))
        updates = {}
        for key, raw in items.items():
            if key not in types:
                raise ConfigError(f"unknown key {sec_name}.{key}")
            updates[key] = _convert(str(raw), types[key], f"{sec_name}.{key}")
        cfg = replace(cfg, **{sec_name: replace(part, **updates)})
    return cfg


def validate(cfg: RunConfig) -> RunConfig:
    d = cfg.data
    if not 0.0 <= d.anomaly_rate <= 1.0:
        raise ConfigError(f"data.anomaly_rate must lie in [0, 1], got {d.anomaly_rate}")
    if d.banks < 1 or d.accounts_per_bank < 0 or d.transactions < 0 or d.test_transactions < 0:
        raise ConfigError("data sizes must be non-negative and banks >= 1")
    if not (0.0 <= d.homophily <= 1.0 and 0.0 <= d.leak <= 1.0):
        raise ConfigError("data.homophily and data.leak must lie in [0, 1]")
    if cfg.forest.tau < 1 or cfg.forest.height < 1:
        raise ConfigError("forest.tau and forest.height must be >= 1")
    if cfg.cuckoo.num_bins < 0 or cfg.cuckoo.hashes < 1:
        raise ConfigError("cuckoo.num_bins must be >= 0 and cuckoo.hashes >= 1")
    if cfg.dp.oversample_ratio < 1:
        raise ConfigError("dp.oversample_ratio must be >= 1")
    try:
        probs = cfg.flag_probs()
        if not probs or any(p < 0 for p in probs.values()):
            raise ValueError
        cfg.protocol_config().codec(d.banks)
        cfg.dp_config()
        cfg.routing_table(d.banks)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return cfg


def load_config(path: str | Path | None = None,
                overrides: Mapping[str, Mapping[str, str]] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        cfg = apply_overrides(cfg, {s: dict(parser[s]) for s in parser.sections()})
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return validate(cfg)
