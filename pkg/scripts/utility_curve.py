"""Privacy/utility curve: average precision and planted-rule recall across epsilon.

    python3 scripts/utility_curve.py --epsilons 0.1 0.5 1 2 5 --out curve.json
"""

import argparse
import json
import time

from privforest import analysis, datagen, pipeline
from privforest.config import DataSection, DpSection, ForestSection, RunConfig, RunSection


def make_cfg(args, epsilon: float | None) -> RunConfig:
    return RunConfig(run=RunSection(seed=args.seed),
                     data=DataSection(banks=args.banks, accounts_per_bank=args.accounts,
                                      transactions=args.train, test_transactions=args.test,
                                      anomaly_rate=args.anomaly_rate),
                     forest=ForestSection(tau=args.tau, height=args.height),
                     dp=DpSection(enabled=epsilon is not None, epsilon=epsilon or 1.0,
                                  bound=args.bound, oversample_ratio=args.oversample))


def measure(cfg: RunConfig, data) -> dict:
    flags = datagen.account_flags(data.accounts)
    rule = pipeline.planted_rule(cfg)
    run = pipeline.train_run(cfg, data.accounts, data.train)
    rows = pipeline.predict(run.fed, data.test)
    truth = [tx.label for tx in data.test]
    m = analysis.evaluate([r["label"] for r in rows], truth, [r["score"] for r in rows])
    inside = [tx.label == 1 and rule.matches(tx, flags) for tx in data.test]
    m["rule_recall"] = sum(r["label"] for r, i in zip(rows, inside) if i) / max(sum(inside), 1)
    m["red_leaves"] = run.n_red
    return m


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--epsilons", type=float, nargs="+", default=[0.1, 0.5, 1.0, 2.0, 5.0])
    p.add_argument("--bound", type=int, default=5)
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--banks", type=int, default=3)
    p.add_argument("--accounts", type=int, default=1000)
    p.add_argument("--train", type=int, default=8000)
    p.add_argument("--test", type=int, default=2000)
    p.add_argument("--anomaly-rate", type=float, default=0.05)
    p.add_argument("--tau", type=int, default=12)
    p.add_argument("--height", type=int, default=4)
    p.add_argument("--oversample", type=float, default=4.0)
    p.add_argument("--out", help="write the curve as JSON")
    args = p.parse_args()

    data = pipeline.generate(make_cfg(args, None))
    curve = []
    for eps in [None] + sorted(args.epsilons):
        start = time.perf_counter()
        m = measure(make_cfg(args, eps), data)
        m["epsilon"] = eps
        m["seconds"] = round(time.perf_counter() - start, 1)
        curve.append(m)
        label = "off" if eps is None else f"{eps:g}"
        print(f"eps={label:>5}  AP={m['average_precision']:.3f}  recall={m['recall']:.3f}  "
              f"rule_recall={m['rule_recall']:.3f}  f1={m['f1']:.3f}  ({m['seconds']}s)")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(curve, fh, indent=1)


if __name__ == "__main__":
    main()
