"""Command line: ``privforest {gen,train,infer,audit,analyze}``.

Exit codes: 0 success, 1 protocol or audit failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import analysis, datagen, pipeline
from .audit import audit_records
from .config import RunConfig, load_config
from .errors import ConfigError, DomainError, PrivForestError
from .simnet import load_jsonl


def _overrides(args) -> dict:
    out: dict[str, dict[str, str]] = {}
    if getattr(args, "seed", None) is not None:
        out.setdefault("run", {})["seed"] = str(args.seed)
    if getattr(args, "dp", None) is not None:
        out.setdefault("dp", {})["enabled"] = args.dp
    if getattr(args, "banks", None) is not None:
        out.setdefault("data", {})["banks"] = str(args.banks)
    if getattr(args, "broadcast_fallback", False):
        out.setdefault("routing", {})["broadcast_fallback"] = "true"
    return out


def _config(args) -> RunConfig:
    return load_config(args.config, _overrides(args))


def _read_accounts(data_dir: Path, n_banks: int) -> list:
    tables = []
    for j in range(n_banks):
        path = data_dir / f"accounts_bank{j + 1}.csv"
        if not path.exists():
            raise ConfigError(f"missing bank table {path}")
        tables.append(datagen.read_accounts(path))
    return tables


def cmd_gen(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = pipeline.generate(cfg)
    datagen.write_transactions(out / "transactions.csv", data.train)
    datagen.write_transactions(out / "test_transactions.csv", data.test)
    for j, table in enumerate(data.accounts):
        datagen.write_accounts(out / f"accounts_bank{j + 1}.csv", table)
    print(f"wrote {len(data.train)} training and {len(data.test)} test transactions, "
          f"{len(data.accounts)} bank tables to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    data_dir = Path(args.data)
    accounts = _read_accounts(data_dir, cfg.data.banks)
    txs = datagen.read_transactions(data_dir / "transactions.csv")
    warning = pipeline.warn_oversampling(cfg, txs)
    if warning:
        print(f"warning: {warning}", file=sys.stderr)
    run = pipeline.train_run(cfg, accounts, txs)
    out = pipeline.save_model(run, cfg, args.out)
    expected = analysis.expected_red_leaves_branching(
        [branching(f) for f in run.forest.pns_features],
        [branching(f) for f in run.forest.bank_features], cfg.forest.height, cfg.forest.tau)
    report = run.cost_report()
    print(f"trees={cfg.forest.tau} height={cfg.forest.height} red_leaves={run.n_red} "
          f"(expected {expected:.2f}) dp={'on' if cfg.dp.enabled else 'off'}")
    print(report.table())
    print(f"model written to {out}")
    return 0


def cmd_infer(args) -> int:
    cfg = _config(args)
    data_dir = Path(args.data)
    accounts = _read_accounts(data_dir, cfg.data.banks)
    fed = pipeline.load_federation(args.model, cfg, accounts)
    txs = datagen.read_transactions(args.input or data_dir / "test_transactions.csv")
    rows = pipeline.predict(fed, txs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tx_id", "label", "confidence"])
        for r in rows:
            w.writerow([r["tx_id"], r["label"], f"{r['confidence']:.6f}"])
    if any(tx.label for tx in txs) or args.metrics:
        metrics = analysis.evaluate([r["label"] for r in rows], [tx.label for tx in txs],
                                    [r["score"] for r in rows])
        print(json.dumps({k: round(v, 6) for k, v in metrics.items()}, sort_keys=True))
    print(f"{len(rows)} predictions written to {out}")
    return 0


def cmd_audit(args) -> int:
    records = load_jsonl(args.transcript)
    reference = load_jsonl(args.against) if args.against else None
    report = audit_records(records, reference)
    print(report.text())
    return 0 if report.passed else 1


def branching(feature) -> int:
    return len(feature.domain) if feature.kind == "categorical" else 2


def cmd_analyze(args) -> int:
    try:
        rows = analysis.lemma_table(args.cs, args.cb, args.height, args.tau, args.trials, args.seed)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    top = rows[-1]
    result = {"params": {"c_s": args.cs, "c_b": args.cb, "height": args.height, "tau": args.tau},
              "expected_red_leaves": top["expected_forest"], "levels": rows}
    if args.trials:
        mc = analysis.McResult(top["mc_mean_per_tree"], top["mc_stderr"], args.trials)
        per_tree = top["expected_per_tree"]
        result["monte_carlo"] = {"mean_per_tree": mc.mean, "stderr": mc.stderr,
                                 "relative_error": abs(mc.mean - per_tree) / per_tree if per_tree else 0.0}
    print(f"{'h':>3} {'E[R_h] per tree':>16} {'E[R_h] forest':>14}")
    for r in rows:
        print(f"{r['height']:>3} {r['expected_per_tree']:>16.4f} {r['expected_forest']:>14.4f}")
    if args.trials:
        print(f"Monte Carlo ({args.trials} trees): {top['mc_mean_per_tree']:.4f} "
              f"+/- {top['mc_stderr']:.4f} per tree")
    if args.json:
        Path(args.json).write_text(json.dumps(result, indent=1, sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="privforest", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="run configuration file (INI)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--banks", type=int)
        sp.add_argument("--dp", choices=["on", "off"])
        sp.add_argument("--broadcast-fallback", action="store_true")
        sp.add_argument("--out", required=out_required)

    sp = sub.add_parser("gen", help="generate synthetic PNS and bank data")
    common(sp)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train", help="federated training into a model directory")
    common(sp)
    sp.add_argument("--data", required=True, help="directory written by gen")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="federated inference with a trained model")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True, help="directory holding the bank tables")
    sp.add_argument("--input", help="transactions CSV (defaults to test_transactions.csv)")
    sp.add_argument("--metrics", action="store_true", help="print metrics even without positives")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("audit", help="leakage checks on a transcript")
    sp.add_argument("transcript")
    sp.add_argument("--against", help="transcript of a run on unrelated data, for a shape diff")
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("analyze", help="red-leaf expectation table")
    sp.add_argument("--cs", type=int, default=10)
    sp.add_argument("--cb", type=int, default=2)
    sp.add_argument("--height", type=int, default=6)
    sp.add_argument("--tau", type=int, default=12)
    sp.add_argument("--trials", type=int, default=0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--json", help="also write the table as JSON")
    sp.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (PrivForestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
