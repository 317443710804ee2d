"""In-process message bus that records what every party sees.

Each send appends a metadata record to the sender's and receiver's transcripts.
Records carry the payload shape (item count, per-type counts, size class and
dimensions) but never the payload itself, so a transcript is exactly the
observable part of a party's view.
"""

from __future__ import annotations

import json
import math
import threading
from collections import Counter, OrderedDict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .errors import UnknownParty


@dataclass(frozen=True)
class PayloadShape:
    items: int
    types: tuple[tuple[str, int], ...]
    size_class: int = 0
    dims: tuple = ()

    def to_dict(self) -> dict:
        return {"items": self.items, "types": dict(self.types),
                "size_class": self.size_class, "dims": list(self.dims)}


def shape_of(types: dict[str, int], dims: Sequence = (), nbytes: int = 0) -> PayloadShape:
    """Shape from per-type item counts; ``nbytes`` is bucketed to a power of two."""
    size_class = math.ceil(math.log2(nbytes)) if nbytes > 0 else 0
    return PayloadShape(sum(types.values()), tuple(sorted(types.items())), size_class,
                        tuple(dims))


@dataclass(frozen=True)
class Message:
    seq: int
    src: str
    dst: str
    kind: str
    phase: str
    shape: PayloadShape
    payload: Any = field(default=None, compare=False, repr=False)

    def meta(self) -> dict:
        return {"seq": self.seq, "src": self.src, "dst": self.dst, "kind": self.kind,
                "phase": self.phase, **self.shape.to_dict()}


class SimNet:
    """Run-to-completion bus with FIFO delivery per (src, dst) channel."""

    def __init__(self):
        self._lock = threading.Lock()
        self._seq = 0
        self._inbox: dict[str, deque[Message]] = OrderedDict()
        self._records: dict[str, list[dict]] = OrderedDict()
        self.phase = "train"

    @property
    def parties(self) -> list[str]:
        return list(self._inbox)

    def register(self, party: str) -> None:
        if party not in self._inbox:
            self._inbox[party] = deque()
            self._records[party] = []

    def _check(self, party: str) -> None:
        if party not in self._inbox:
            raise UnknownParty(f"party {party!r} is not registered")

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def send(self, src: str, dst: str | Sequence[str], kind: str, payload: Any,
             shape: PayloadShape) -> list[int]:
        """Deliver to one party or fan out to several; returns the sequence numbers."""
        targets = [dst] if isinstance(dst, str) else list(dst)
        self._check(src)
        for t in targets:
            self._check(t)
        seqs = []
        with self._lock:
            for t in targets:
                msg = Message(self._next_seq(), src, t, kind, self.phase, shape, payload)
                meta = msg.meta()
                self._records[src].append({"party": src, "direction": "send", **meta})
                self._records[t].append({"party": t, "direction": "recv", **meta})
                self._inbox[t].append(msg)
                seqs.append(msg.seq)
        return seqs

    def recv(self, party: str, src: str | None = None, kind: str | None = None) -> Message | None:
        """Pop the oldest matching message for ``party``, or None."""
        self._check(party)
        box = self._inbox[party]
        for i, msg in enumerate(box):
            if (src is None or msg.src == src) and (kind is None or msg.kind == kind):
                del box[i]
                return msg
        return None

    def drain(self, party: str, kind: str | None = None) -> list[Message]:
        out = []
        while (msg := self.recv(party, kind=kind)) is not None:
            out.append(msg)
        return out

    def pending(self, party: str) -> int:
        self._check(party)
        return len(self._inbox[party])

    def log_local(self, party: str, event: str, **info) -> None:
        """Record a party-local event (such as a decryption) in its transcript."""
        self._check(party)
        with self._lock:
            self._records[party].append({"party": party, "direction": "local",
                                         "seq": self._next_seq(), "event": event,
                                         "phase": self.phase, **info})

    def transcript(self, party: str) -> list[dict]:
        self._check(party)
        return list(self._records[party])

    def records(self) -> list[dict]:
        every = [r for recs in self._records.values() for r in recs]
        order = {"send": 0, "recv": 1, "local": 2}
        return sorted(every, key=lambda r: (r["seq"], order[r["direction"]]))

    def export_jsonl(self, path: str | Path) -> None:
        write_jsonl(path, self.records())


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n")


def load_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _signature(r: dict) -> str:
    return json.dumps({"types": r.get("types", {}), "size_class": r.get("size_class", 0),
                       "dims": r.get("dims", [])}, sort_keys=True)


def view_shape(records: Iterable[dict], party: str | None = None,
               phase: str | None = None) -> dict:
    """Summary of a view: per (direction, peer, kind) message and item counts plus shapes.

    Sequence numbers are left out on purpose; the summary should depend only on
    what kinds of messages were exchanged and how big they were.
    """
    groups: dict[tuple, dict] = {}
    for r in records:
        if party is not None and r["party"] != party:
            continue
        if phase is not None and r.get("phase") != phase:
            continue
        if r["direction"] == "local":
            key = (r["party"], "local", "-", r["event"])
            g = groups.setdefault(key, {"events": 0})
            g["events"] += 1
            continue
        peer = r["dst"] if r["direction"] == "send" else r["src"]
        key = (r["party"], r["direction"], peer, r["kind"])
        g = groups.setdefault(key, {"messages": 0, "items": 0, "shapes": Counter()})
        g["messages"] += 1
        g["items"] += r.get("items", 0)
        g["shapes"][_signature(r)] += 1
    out: dict = {}
    for (who, direction, peer, kind), g in sorted(groups.items()):
        if "shapes" in g:
            g = {**g, "shapes": dict(sorted(g["shapes"].items()))}
        out.setdefault(who, {}).setdefault(direction, {}).setdefault(peer, {})[kind] = g
    return out


def summary_bytes(summary: dict) -> bytes:
    return json.dumps(summary, sort_keys=True, separators=(",", ":")).encode()
