"""Leakage checks over exported transcripts."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .protocol import AGG_NAME, PNS_NAME
from .simnet import summary_bytes, view_shape

ALLOWED_TYPES = {"ct", "ct_bits", "leaf_ref"}

# (role, direction) -> message kinds that role may send or receive
ALLOWED_KINDS = {
    ("pns", "send"): {"pisum_tables", "infer_query"},
    ("pns", "recv"): {"infer_answer"},
    ("bank", "send"): {"noisy_counts", "infer_answer"},
    ("bank", "recv"): {"pisum_tables", "sum_counts", "infer_query"},
    ("aggregator", "send"): {"sum_counts"},
    ("aggregator", "recv"): {"noisy_counts"},
}


def role_of(party: str) -> str:
    if party == PNS_NAME:
        return "pns"
    if party == AGG_NAME:
        return "aggregator"
    return "bank"


@dataclass
class AuditReport:
    findings: list[str] = field(default_factory=list)
    checks: dict[str, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.findings

    def fail(self, check: str, msg: str) -> None:
        self.checks[check] = False
        self.findings.append(msg)

    def text(self) -> str:
        lines = [f"{'PASS' if ok else 'FAIL'}  {name}" for name, ok in self.checks.items()]
        lines += [f"  - {f}" for f in self.findings]
        lines.append("audit: " + ("pass" if self.passed else "fail"))
        return "\n".join(lines)


def shape_summaries(records: Sequence[dict]) -> dict[str, bytes]:
    """Byte summaries of every bank's training view and the aggregator's full view."""
    out = {}
    for party in sorted({r["party"] for r in records}):
        role = role_of(party)
        if role == "bank":
            out[party] = summary_bytes(view_shape(records, party, phase="train"))
        elif role == "aggregator":
            out[party] = summary_bytes(view_shape(records, party))
    return out


def audit_records(records: Iterable[dict], reference: Iterable[dict] | None = None) -> AuditReport:
    records = list(records)
    report = AuditReport()
    for name in ("payload_types", "message_kinds", "key_confinement",
                 "aggregator_count", "pns_train_silence"):
        report.checks[name] = True

    for r in records:
        role = role_of(r["party"])
        if r["direction"] == "local":
            if r.get("event") == "decrypt" and role != "pns":
                report.fail("key_confinement", f"seq {r['seq']}: {r['party']} decrypted")
            continue
        bad = set(r.get("types", {})) - ALLOWED_TYPES
        if bad:
            report.fail("payload_types", f"seq {r['seq']}: {r['party']} {r['direction']} "
                                         f"{r['kind']} carries plaintext items {sorted(bad)}")
        if r["kind"] not in ALLOWED_KINDS[(role, r["direction"])]:
            report.fail("message_kinds", f"seq {r['seq']}: {r['party']} may not "
                                         f"{r['direction']} {r['kind']}")
        if role == "pns" and r["direction"] == "recv" and r.get("phase") == "train":
            report.fail("pns_train_silence", f"seq {r['seq']}: PNS received data during training")

    banks = {r["party"] for r in records if role_of(r["party"]) == "bank"}
    agg = [r for r in records if r["party"] == AGG_NAME]
    got = sum(r.get("items", 0) for r in agg if r["direction"] == "recv" and r["kind"] == "noisy_counts")
    rounds = Counter(r["kind"] for r in records
                     if r["party"] == PNS_NAME and r["direction"] == "send")["pisum_tables"]
    rounds = rounds // len(banks) if banks else 0
    want = len(banks) * 2 * rounds
    if got != want:
        report.fail("aggregator_count", f"aggregator received {got} count ciphertexts, "
                                        f"expected {want} ({len(banks)} banks x 2 x {rounds} leaves)")

    if reference is not None:
        report.checks["shape_diff"] = True
        mine, theirs = shape_summaries(records), shape_summaries(list(reference))
        for party in sorted(set(mine) | set(theirs)):
            if mine.get(party) != theirs.get(party):
                report.fail("shape_diff", f"{party}: view shape differs from the reference run")
    return report
