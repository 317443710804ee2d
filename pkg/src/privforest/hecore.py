"""Simulated-exact homomorphic encryption backend.

Slots hold exact reals and every operation is plain arithmetic. What is
modelled faithfully is the part the protocols depend on: key-gated
decryption, CKKS-style slot vectors with a fixed slot count, and the
multiplicative-depth budget with automatic bootstrapping.

Ciphertexts store only their active slot prefix; every slot past it is an
implicit zero. Slot contents are private (``_slots``) and the only public
reader is :func:`decrypt`, which checks the key id.
"""

from __future__ import annotations

import base64
import math
import secrets
import threading
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DepthError, KeyMismatch, ValueTooLong, WidthMismatch


@dataclass(frozen=True)
class HeParams:
    slot_count: int = 32768
    depth_budget: int = 6
    fractional_precision: int = 24
    security_tag: str = "sim-128"
    compare_depth: int = 3

    def __post_init__(self):
        if self.slot_count < 1 or self.slot_count & (self.slot_count - 1):
            raise ValueError(f"slot_count must be a power of two, got {self.slot_count}")
        if self.depth_budget < 1:
            raise ValueError("depth_budget must be >= 1")
        if not 1 <= self.compare_depth <= self.depth_budget:
            raise ValueError("compare_depth must lie in [1, depth_budget]")
        if self.fractional_precision < 1:
            raise ValueError("fractional_precision must be >= 1")


@dataclass(frozen=True)
class PublicKey:
    key_id: str
    params: HeParams


@dataclass(frozen=True, repr=False)
class SecretKey:
    key_id: str
    params: HeParams

    def __repr__(self):
        return f"SecretKey(key_id={self.key_id!r})"


@dataclass(frozen=True)
class KeyPair:
    secret_key: SecretKey
    public_key: PublicKey

    @property
    def key_id(self) -> str:
        return self.public_key.key_id


class OpCounter:
    """Process-wide tally of homomorphic operations."""

    FIELDS = ("encrypt", "decrypt", "add", "mul", "rotate", "pet", "compare", "bootstrap")

    def __init__(self):
        self._lock = threading.Lock()
        self._counts = dict.fromkeys(self.FIELDS, 0)

    def bump(self, **deltas: int) -> None:
        with self._lock:
            for name, value in deltas.items():
                self._counts[name] += value

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def reset(self) -> None:
        with self._lock:
            self._counts = dict.fromkeys(self.FIELDS, 0)


@dataclass(frozen=True)
class DecryptEvent:
    party: str
    key_id: str
    ok: bool


class AuditTrail:
    """Append-only record of every decryption attempt."""

    def __init__(self):
        self._lock = threading.Lock()
        self._events: list[DecryptEvent] = []

    def record(self, event: DecryptEvent) -> None:
        with self._lock:
            self._events.append(event)

    def events(self) -> list[DecryptEvent]:
        with self._lock:
            return list(self._events)

    def __len__(self):
        return len(self._events)


counters = OpCounter()
audit = AuditTrail()


class Ciphertext:
    __slots__ = ("key_id", "params", "depth", "bootstrap_count", "_slots")

    def __init__(self, key_id: str, params: HeParams, slots: np.ndarray,
                 depth: int = 0, bootstrap_count: int = 0):
        self.key_id = key_id
        self.params = params
        self.depth = depth
        self.bootstrap_count = bootstrap_count
        self._slots = slots

    @property
    def slot_count(self) -> int:
        return self.params.slot_count

    def metadata(self) -> dict:
        return {
            "key_id": self.key_id,
            "slot_count": self.slot_count,
            "depth": self.depth,
            "bootstrap_count": self.bootstrap_count,
        }

    def __repr__(self):
        return (f"Ciphertext(key_id={self.key_id!r}, slots={self.slot_count}, "
                f"depth={self.depth}, bootstraps={self.bootstrap_count})")

    def to_dict(self) -> dict:
        blob = base64.b64encode(np.ascontiguousarray(self._slots, dtype="<f8").tobytes())
        return {**self.metadata(), "blob": blob.decode("ascii")}

    @classmethod
    def from_dict(cls, data: dict, params: HeParams) -> "Ciphertext":
        if data["slot_count"] != params.slot_count:
            raise ValueError("ciphertext slot count does not match parameters")
        slots = np.frombuffer(base64.b64decode(data["blob"]), dtype="<f8").copy()
        return cls(data["key_id"], params, slots, data["depth"], data["bootstrap_count"])


@dataclass(frozen=True)
class BitCiphertext:
    """``blocks`` values of ``width`` bits each, one bit per slot, block-major."""

    ct: Ciphertext
    width: int
    blocks: int = 1

    @property
    def key_id(self) -> str:
        return self.ct.key_id

    @property
    def depth(self) -> int:
        return self.ct.depth

    def metadata(self) -> dict:
        return {**self.ct.metadata(), "width": self.width, "blocks": self.blocks}


Operand = Union[Ciphertext, Sequence[float], np.ndarray, float, int]


def keygen(params: HeParams | None = None, rng: np.random.Generator | None = None) -> KeyPair:
    params = params or HeParams()
    if rng is None:
        key_id = secrets.token_hex(8)
    else:
        key_id = f"{int(rng.integers(0, 2**63)):016x}"
    return KeyPair(SecretKey(key_id, params), PublicKey(key_id, params))


def int_to_bits(values, width: int) -> np.ndarray:
    """Big-endian bit matrix of shape (len(values), width)."""
    vals = np.atleast_1d(np.asarray(values, dtype=np.int64))
    if width < 1:
        raise WidthMismatch("bit width must be >= 1")
    if vals.size and (vals.min() < 0 or vals.max() >= 1 << width):
        raise WidthMismatch(f"value does not fit in {width} bits")
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    return ((vals[:, None] >> shifts) & 1).astype(np.float64)


def pet_depth(width: int) -> int:
    """Depth consumed by one equality test: balanced product tree plus the squaring."""
    return math.ceil(math.log2(width)) + 1 if width > 1 else 1


def encrypt(pk: PublicKey, values) -> Ciphertext:
    arr = np.array(values, dtype=np.float64).ravel()
    if arr.size > pk.params.slot_count:
        raise ValueTooLong(f"{arr.size} values exceed {pk.params.slot_count} slots")
    counters.bump(encrypt=1)
    return Ciphertext(pk.key_id, pk.params, arr)


def encrypt_bits(pk: PublicKey, values, width: int) -> BitCiphertext:
    bits = int_to_bits(values, width)
    if bits.size > pk.params.slot_count:
        raise ValueTooLong(f"{bits.shape[0]} blocks of {width} bits exceed the slot count")
    counters.bump(encrypt=1)
    ct = Ciphertext(pk.key_id, pk.params, bits.ravel())
    return BitCiphertext(ct, width, bits.shape[0])


def decrypt(sk: SecretKey, ct: Ciphertext | BitCiphertext, party: str = "pns") -> np.ndarray:
    if isinstance(ct, BitCiphertext):
        ct = ct.ct
    ok = sk.key_id == ct.key_id
    audit.record(DecryptEvent(party, ct.key_id, ok))
    if not ok:
        raise KeyMismatch(f"{party} tried to decrypt a {ct.key_id} ciphertext with key {sk.key_id}")
    counters.bump(decrypt=1)
    out = np.zeros(ct.slot_count)
    out[: ct._slots.size] = ct._slots
    scale = float(1 << ct.params.fractional_precision)
    return np.round(out * scale) / scale


def _same_key(a: Ciphertext, b: Ciphertext) -> None:
    if a.key_id != b.key_id:
        raise KeyMismatch(f"operands under different keys ({a.key_id} vs {b.key_id})")


def _plain(b, slot_count: int) -> np.ndarray:
    arr = np.array(b, dtype=np.float64).ravel()
    if arr.size > slot_count:
        raise ValueTooLong(f"plaintext of {arr.size} values exceeds {slot_count} slots")
    return arr


def _zip(x: np.ndarray, y: np.ndarray, op) -> np.ndarray:
    if x.size == y.size:
        return op(x, y)
    n = max(x.size, y.size)
    xp = np.zeros(n)
    yp = np.zeros(n)
    xp[: x.size] = x
    yp[: y.size] = y
    return op(xp, yp)


def _raise_level(depth: int, boots: int, params: HeParams, cost: int) -> tuple[int, int]:
    if cost > params.depth_budget:
        raise DepthError(f"a single step of depth {cost} exceeds the budget {params.depth_budget}")
    if depth + cost > params.depth_budget:
        counters.bump(bootstrap=1)
        depth, boots = 0, boots + 1
    return depth + cost, boots


def planned_depth(params: HeParams, costs: Sequence[int], start: int = 0) -> int:
    """Level reached after a chain of steps with the given depth costs."""
    depth = start
    for cost in costs:
        if cost > params.depth_budget:
            raise DepthError(f"a single step of depth {cost} exceeds the budget {params.depth_budget}")
        depth = cost if depth + cost > params.depth_budget else depth + cost
    return depth


def he_add(a: Ciphertext, b: Operand) -> Ciphertext:
    counters.bump(add=1)
    if isinstance(b, Ciphertext):
        _same_key(a, b)
        return Ciphertext(a.key_id, a.params, _zip(a._slots, b._slots, np.add),
                          max(a.depth, b.depth), max(a.bootstrap_count, b.bootstrap_count))
    return Ciphertext(a.key_id, a.params, _zip(a._slots, _plain(b, a.slot_count), np.add),
                      a.depth, a.bootstrap_count)


def he_mul(a: Ciphertext, b: Operand) -> Ciphertext:
    counters.bump(mul=1)
    if isinstance(b, Ciphertext):
        _same_key(a, b)
        depth, boots = max(a.depth, b.depth), max(a.bootstrap_count, b.bootstrap_count)
        other = b._slots
    else:
        depth, boots = a.depth, a.bootstrap_count
        other = _plain(b, a.slot_count)
    depth, boots = _raise_level(depth, boots, a.params, 1)
    return Ciphertext(a.key_id, a.params, _zip(a._slots, other, np.multiply), depth, boots)


def he_rotate(ct: Ciphertext, steps: int) -> Ciphertext:
    """Cyclic left rotation by ``steps`` slots."""
    counters.bump(rotate=1)
    full = np.zeros(ct.slot_count)
    full[: ct._slots.size] = ct._slots
    rolled = np.roll(full, -steps)
    nz = np.flatnonzero(rolled)
    rolled = rolled[: nz[-1] + 1] if nz.size else rolled[:1]
    return Ciphertext(ct.key_id, ct.params, rolled, ct.depth, ct.bootstrap_count)


def he_sum_slots(ct: Ciphertext) -> Ciphertext:
    """Total of all slots, placed in slot 0 (rotate-and-add tree)."""
    steps = int(math.log2(ct.slot_count))
    counters.bump(rotate=steps, add=steps)
    total = np.array([ct._slots.sum()])
    return Ciphertext(ct.key_id, ct.params, total, ct.depth, ct.bootstrap_count)


def he_replicate(bits: BitCiphertext, copies: int) -> BitCiphertext:
    """Tile a single encrypted block ``copies`` times (rotate-and-add doubling)."""
    if bits.blocks != 1:
        raise WidthMismatch("only a single-block ciphertext can be replicated")
    if copies * bits.width > bits.ct.slot_count:
        raise ValueTooLong("replicated blocks exceed the slot count")
    steps = math.ceil(math.log2(copies)) if copies > 1 else 0
    counters.bump(rotate=steps, add=steps)
    block = np.zeros(bits.width)
    block[: min(bits.width, bits.ct._slots.size)] = bits.ct._slots[: bits.width]
    ct = Ciphertext(bits.key_id, bits.ct.params, np.tile(block, copies),
                    bits.ct.depth, bits.ct.bootstrap_count)
    return BitCiphertext(ct, bits.width, copies)


def mod_switch(ct: Ciphertext, depth: int) -> Ciphertext:
    """Drop ``ct`` to a lower level without touching its value."""
    if depth < ct.depth or depth > ct.params.depth_budget:
        raise DepthError(f"cannot move a depth-{ct.depth} ciphertext to depth {depth}")
    return Ciphertext(ct.key_id, ct.params, ct._slots, depth, ct.bootstrap_count)


def pet(a: BitCiphertext, b) -> Ciphertext:
    """Private equality test ``(prod_i (1 - a_i - b_i))**2`` block by block.

    ``b`` is a plaintext: one integer (compared against every block), a sequence
    of integers (one per block) or a bit matrix of shape (blocks, width). The
    result of block ``k`` lands in slot ``k * width``.
    """
    width, blocks = a.width, a.blocks
    if isinstance(b, np.ndarray) and b.ndim == 2:
        if b.shape[1] != width:
            raise WidthMismatch(f"plaintext width {b.shape[1]} != ciphertext width {width}")
        plain = b.astype(np.float64, copy=False)
    else:
        plain = int_to_bits(b, width)
    if plain.shape[0] == 1 and blocks > 1:
        plain = np.broadcast_to(plain, (blocks, width))
    if plain.shape[0] != blocks:
        raise WidthMismatch(f"{plain.shape[0]} plaintext blocks for {blocks} encrypted blocks")

    enc = a.ct._slots
    if enc.size < blocks * width:
        enc = np.concatenate([enc, np.zeros(blocks * width - enc.size)])
    x = 1.0 - enc[: blocks * width].reshape(blocks, width) - plain
    counters.bump(add=1, pet=blocks)

    padded = 1 << math.ceil(math.log2(width)) if width > 1 else 1
    if padded != width:
        x = np.hstack([x, np.ones((blocks, padded - width))])
    depth, boots = a.ct.depth, a.ct.bootstrap_count
    while x.shape[1] > 1:
        half = x.shape[1] // 2
        x = x[:, :half] * x[:, half:]
        depth, boots = _raise_level(depth, boots, a.ct.params, 1)
        counters.bump(rotate=1, mul=1)
    x = x[:, 0] ** 2
    depth, boots = _raise_level(depth, boots, a.ct.params, 1)
    counters.bump(mul=1)

    out = np.zeros(blocks * width)
    out[::width] = x
    return Ciphertext(a.key_id, a.ct.params, out, depth, boots)


def he_compare(a: Ciphertext, b: Ciphertext, cost: int | None = None) -> Ciphertext:
    """Encrypted ``slot0(a) > slot0(b)`` as 1.0/0.0; ties give 0."""
    _same_key(a, b)
    cost = a.params.compare_depth if cost is None else cost
    counters.bump(compare=1)
    x = a._slots[0] if a._slots.size else 0.0
    y = b._slots[0] if b._slots.size else 0.0
    depth, boots = _raise_level(max(a.depth, b.depth),
                                max(a.bootstrap_count, b.bootstrap_count), a.params, cost)
    return Ciphertext(a.key_id, a.params, np.array([1.0 if x > y else 0.0]), depth, boots)
