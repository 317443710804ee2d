"""Cuckoo tables, padding/encryption, and the bank-side encrypted intersection sum.

Account ids are first mapped to sigma-bit codes. Real codes live in the lower
half ``[0, 2**(sigma-1))``; padding dummies are drawn from the upper half and
the all-ones code is kept back as a filler that never matches anything.

An encrypted table is SIMD-packed: each chunk ciphertext holds
``slot_count // sigma`` bins, bin ``i`` occupying slots ``[i*sigma, (i+1)*sigma)``
of the id chunk and slot ``i*sigma`` of the count chunk. The bank probes its
own accounts' candidate bins; many probes share one packed equality test.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import hecore
from .errors import IdDomainError, TableFull
from .hecore import BitCiphertext, Ciphertext, PublicKey

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class IdCodec:
    """Maps account ids to sigma-bit codes.

    ``index`` mode is injective: ``<bank prefix><serial>`` becomes
    ``bank_index << serial_bits | serial``. ``hash`` mode takes a salted
    64-bit hash truncated to ``sigma - 1`` bits; distinct ids can then share
    a code, which tables detect and fix by re-salting.
    """

    sigma: int = 16
    prefixes: tuple[str, ...] = ()
    mode: str = "index"

    def __post_init__(self):
        if self.mode not in ("index", "hash"):
            raise ValueError(f"unknown id mode {self.mode!r}")
        if self.sigma < 2:
            raise ValueError("sigma must be >= 2 to leave room for dummy ids")
        if self.mode == "index" and self.serial_bits < 1:
            raise IdDomainError(f"sigma={self.sigma} leaves no room for serial numbers")

    @property
    def bank_bits(self) -> int:
        return math.ceil(math.log2(len(self.prefixes))) if len(self.prefixes) > 1 else 0

    @property
    def serial_bits(self) -> int:
        return self.sigma - 1 - self.bank_bits

    @property
    def filler(self) -> int:
        return (1 << self.sigma) - 1

    def dummy_range(self) -> tuple[int, int]:
        """Half-open range of dummy codes."""
        return 1 << (self.sigma - 1), (1 << self.sigma) - 1

    def encode(self, account_id: str, salt: int = 0) -> int:
        if self.mode == "hash":
            digest = hashlib.blake2b(account_id.encode(), digest_size=8,
                                     key=salt.to_bytes(8, "little")).digest()
            return int.from_bytes(digest, "little") & ((1 << (self.sigma - 1)) - 1)
        best = -1
        for j, p in enumerate(self.prefixes):
            if account_id.startswith(p) and (best < 0 or len(p) > len(self.prefixes[best])):
                best = j
        if best < 0:
            raise IdDomainError(f"account {account_id!r} matches no bank prefix")
        rest = account_id[len(self.prefixes[best]):]
        if not rest.isdigit():
            raise IdDomainError(f"account {account_id!r} has a non-numeric serial")
        serial = int(rest)
        if serial >= 1 << self.serial_bits:
            raise IdDomainError(f"serial {serial} needs more than {self.serial_bits} bits; raise sigma")
        return best << self.serial_bits | serial

    def encode_many(self, account_ids: Iterable[str], salt: int = 0) -> np.ndarray:
        return np.array([self.encode(a, salt) for a in account_ids], dtype=np.int64)


def bin_positions(codes: np.ndarray, salts: Sequence[int], total_bins: int) -> np.ndarray:
    """Candidate bin of every code under every salted hash, shape (n, len(salts))."""
    x = np.asarray(codes, dtype=np.int64).astype(np.uint64)[:, None]
    s = np.array(salts, dtype=np.uint64)[None, :]
    with np.errstate(over="ignore"):
        z = (x ^ s) + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return (z % np.uint64(total_bins)).astype(np.int64)


def _fresh_salts(rng: np.random.Generator, n: int) -> tuple[int, ...]:
    return tuple(int(v) for v in rng.integers(0, 2**63, size=n))


@dataclass
class CuckooTable:
    num_bins: int
    hashes: int
    sigma: int
    salts: tuple[int, ...]
    ids: np.ndarray      # code per bin, -1 when empty
    counts: np.ndarray
    dummy: np.ndarray    # bool per bin
    id_salt: int = 0

    @property
    def total_bins(self) -> int:
        return self.num_bins * self.hashes

    def candidate_bins(self, code: int) -> list[int]:
        return sorted(set(bin_positions(np.array([code]), self.salts, self.total_bins)[0].tolist()))

    def lookup(self, code: int) -> int | None:
        for b in self.candidate_bins(code):
            if self.ids[b] == code and not self.dummy[b]:
                return int(self.counts[b])
        return None

    def real_entries(self) -> dict[int, int]:
        mask = (self.ids >= 0) & ~self.dummy
        return dict(zip(self.ids[mask].tolist(), self.counts[mask].tolist()))

    def is_padded(self) -> bool:
        return bool((self.ids >= 0).all())


def build_cuckoo(entries: Sequence[tuple[int, int]], num_bins: int, hashes: int = 3,
                 max_evictions: int = 500, rng: np.random.Generator | None = None,
                 salts: Sequence[int] | None = None, sigma: int = 16,
                 id_salt: int = 0) -> CuckooTable:
    """Insert (code, count) pairs with random-walk eviction; raise TableFull on failure."""
    rng = rng if rng is not None else np.random.default_rng()
    total = num_bins * hashes
    if len(entries) > total:
        raise TableFull(f"{len(entries)} entries cannot fit in {total} bins")
    salts = tuple(salts) if salts is not None else _fresh_salts(rng, hashes)
    if len(salts) != hashes:
        raise ValueError("need one salt per hash function")
    ids = np.full(total, -1, dtype=np.int64)
    counts = np.zeros(total, dtype=np.int64)
    if entries:
        codes = np.array([c for c, _ in entries], dtype=np.int64)
        if len(set(codes.tolist())) != len(codes):
            raise ValueError("entry codes must be distinct")
        cands = bin_positions(codes, salts, total).tolist()
        where = {int(c): cands[i] for i, c in enumerate(codes)}
        for code, count in entries:
            code, count = int(code), int(count)
            prev = -1
            for _ in range(max_evictions + 1):
                options = where[code]
                free = next((b for b in options if ids[b] < 0), None)
                if free is not None:
                    ids[free], counts[free] = code, count
                    break
                choices = [b for b in options if b != prev] or options
                b = choices[int(rng.integers(len(choices)))]
                code, ids[b] = int(ids[b]), code
                count, counts[b] = int(counts[b]), count
                prev = b
            else:
                raise TableFull(f"eviction chain exceeded {max_evictions} steps")
    return CuckooTable(num_bins, hashes, sigma, salts, ids, counts,
                       np.zeros(total, dtype=bool), id_salt)


def build_account_table(accounts: Mapping[str, int], codec: IdCodec, num_bins: int,
                        hashes: int = 3, max_evictions: int = 500,
                        rng: np.random.Generator | None = None, retries: int = 3) -> CuckooTable:
    """Encode account ids and build a table, re-salting on code collisions or TableFull."""
    rng = rng if rng is not None else np.random.default_rng()
    names = list(accounts)
    id_salt = 0
    for _ in range(64):
        codes = codec.encode_many(names, id_salt) if names else np.zeros(0, dtype=np.int64)
        if len(set(codes.tolist())) == len(codes):
            break
        if codec.mode != "hash":
            raise IdDomainError("index-mode codes collided; account ids are not unique")
        id_salt = int(rng.integers(1, 2**63))
    else:
        raise IdDomainError("could not find a collision-free id salt")
    entries = [(int(c), int(accounts[a])) for c, a in zip(codes, names)]
    last = None
    for _ in range(1 + retries):
        try:
            return build_cuckoo(entries, num_bins, hashes, max_evictions, rng,
                                sigma=codec.sigma, id_salt=id_salt)
        except TableFull as exc:
            last = exc
            if len(entries) > num_bins * hashes:
                raise
    raise TableFull(f"table build failed after {retries} re-salts: {last}")


def pad(table: CuckooTable, codec: IdCodec, rng: np.random.Generator) -> CuckooTable:
    """Fill every empty bin with a dummy (reserved code, zero count)."""
    empty = table.ids < 0
    lo, hi = codec.dummy_range()
    ids, dummy = table.ids.copy(), table.dummy.copy()
    ids[empty] = rng.integers(lo, hi, size=int(empty.sum()))
    dummy[empty] = True
    return CuckooTable(table.num_bins, table.hashes, table.sigma, table.salts, ids,
                       table.counts.copy(), dummy, table.id_salt)


@dataclass(frozen=True)
class EncTable:
    num_bins: int
    hashes: int
    sigma: int
    salts: tuple[int, ...]
    id_salt: int
    bins_per_chunk: int
    id_chunks: tuple[BitCiphertext, ...]
    count_chunks: tuple[Ciphertext, ...]

    @property
    def total_bins(self) -> int:
        return self.num_bins * self.hashes

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.num_bins, self.hashes, self.sigma

    @property
    def n_ciphertexts(self) -> int:
        return len(self.id_chunks) + len(self.count_chunks)

    def metadata(self) -> dict:
        return {"dims": list(self.dims), "chunks": len(self.id_chunks),
                "depths": sorted({c.depth for c in self.id_chunks}
                                 | {c.depth for c in self.count_chunks})}

    def bin(self, b: int) -> tuple[BitCiphertext, Ciphertext]:
        """Bin ``b`` rotated to slot 0 (id bits, count)."""
        k, off = divmod(b, self.bins_per_chunk)
        ids = hecore.he_rotate(self.id_chunks[k].ct, off * self.sigma)
        cnt = hecore.he_rotate(self.count_chunks[k], off * self.sigma)
        return BitCiphertext(ids, self.sigma, 1), cnt


def pad_and_encrypt(table: CuckooTable, pk: PublicKey, codec: IdCodec,
                    rng: np.random.Generator) -> EncTable:
    if not table.is_padded():
        table = pad(table, codec, rng)
    sigma = table.sigma
    per_chunk = pk.params.slot_count // sigma
    if per_chunk < 1:
        raise ValueError("sigma exceeds the slot count")
    id_chunks, count_chunks = [], []
    for lo in range(0, table.total_bins, per_chunk):
        ids = table.ids[lo: lo + per_chunk]
        id_chunks.append(hecore.encrypt_bits(pk, ids, sigma))
        spread = np.zeros(ids.size * sigma)
        spread[::sigma] = table.counts[lo: lo + per_chunk]
        count_chunks.append(hecore.encrypt(pk, spread))
    return EncTable(table.num_bins, table.hashes, sigma, table.salts, table.id_salt,
                    per_chunk, tuple(id_chunks), tuple(count_chunks))


def result_depth(params: hecore.HeParams, sigma: int) -> int:
    """Level at which every intersection-sum output is delivered."""
    return hecore.planned_depth(params, [1] * (hecore.pet_depth(sigma) + 1))


def intersection_sum(table: EncTable, codes: np.ndarray, pk: PublicKey) -> Ciphertext:
    """Encrypted sum of table counts whose id equals one of ``codes``.

    Each account probes its distinct candidate bins. Probes are packed into
    rounds with at most one probe per bin, and each round is one SIMD
    equality test against a whole chunk; unused bins get the filler code.
    """
    sigma = table.sigma
    target = result_depth(pk.params, sigma)
    total = None
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size:
        cand = bin_positions(codes, table.salts, table.total_bins)
        pairs = np.unique(np.column_stack([cand.ravel(), np.repeat(codes, table.hashes)]), axis=0)
        bins, pcodes = pairs[:, 0], pairs[:, 1]
        # rank of each probe among probes to the same bin (bins come sorted)
        starts = np.r_[0, np.flatnonzero(np.diff(bins)) + 1]
        first = np.repeat(starts, np.diff(np.r_[starts, bins.size]))
        rank = np.arange(bins.size) - first
        filler = hecore.int_to_bits([(1 << sigma) - 1], sigma)[0]
        code_bits = hecore.int_to_bits(pcodes, sigma)
        for k, (id_ct, cnt_ct) in enumerate(zip(table.id_chunks, table.count_chunks)):
            lo = k * table.bins_per_chunk
            in_chunk = (bins >= lo) & (bins < lo + id_ct.blocks)
            if not in_chunk.any():
                continue
            for r in range(int(rank[in_chunk].max()) + 1):
                sel = in_chunk & (rank == r)
                rows = np.tile(filler, (id_ct.blocks, 1))
                rows[bins[sel] - lo] = code_bits[sel]
                eq = hecore.pet(id_ct, rows)
                part = hecore.he_sum_slots(hecore.he_mul(eq, cnt_ct))
                total = part if total is None else hecore.he_add(total, part)
    if total is None:
        total = hecore.encrypt(pk, [0.0])
    return hecore.mod_switch(total, target) if total.depth < target else total


def bank_intersection_sum(tables: tuple[EncTable, EncTable], accounts_with_flag: Iterable[str],
                          codec: IdCodec, pk: PublicKey) -> tuple[Ciphertext, Ciphertext]:
    """Encrypted (N^0, N^1) contributions of one bank for one red leaf."""
    accounts = sorted(accounts_with_flag)
    out = []
    for table in tables:
        codes = codec.encode_many(accounts, table.id_salt) if accounts else np.zeros(0, np.int64)
        out.append(intersection_sum(table, codes, pk))
    return out[0], out[1]


def plaintext_intersection_sum(entries: Mapping[str, int], bank_accounts: Iterable[str]) -> int:
    """Reference answer: sum of counts over accounts the bank holds."""
    held = set(bank_accounts)
    return sum(c for a, c in entries.items() if a in held)


def default_num_bins(max_entries: int) -> int:
    """Bins per hash function at load factor <= 0.5 per hash."""
    return max(1, 2 * math.ceil(max_entries))
