"""Training operation counts as PNS accounts, bank accounts and red leaves grow.

    python3 scripts/cost_sweep.py --sizes 50 100 200 400
"""

import argparse

from privforest import datagen, pipeline
from privforest.config import ForestSection, RunConfig, RunSection

COLUMNS = ("pet", "mul", "add", "rotate", "compare", "bootstrap", "encrypt")


def train_ops(cfg, accounts, txs, forest):
    run = pipeline.train_run(cfg, accounts, txs, forest=forest)
    return run.n_red, run.fed.pns.num_bins, run.phases["train"]


def row(label, value, n_red, bins, ops):
    cells = " ".join(f"{ops.get(c, 0):>10}" for c in COLUMNS)
    print(f"{label:<14} {value:>6} {n_red:>6} {bins:>6} {cells}")


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[50, 100, 200])
    p.add_argument("--transactions", type=int, default=500)
    p.add_argument("--heights", type=int, nargs="+", default=[2, 3, 4])
    p.add_argument("--seed", type=int, default=5)
    args = p.parse_args()

    cfg = RunConfig(run=RunSection(seed=args.seed))
    forest = pipeline.make_forest(cfg)
    top = max(args.sizes)
    accounts = datagen.gen_accounts(args.seed, cfg.data.banks, top)
    print(f"{'sweep':<14} {'value':>6} {'red':>6} {'bins':>6} "
          + " ".join(f"{c:>10}" for c in COLUMNS))

    for k in args.sizes:
        txs = datagen.gen_transactions(args.seed, args.transactions,
                                       [t[:k] for t in accounts], 0.1)
        row("pns_accounts", k, *train_ops(cfg, accounts, txs, forest))

    smallest = min(args.sizes)
    fixed = datagen.gen_transactions(args.seed, args.transactions,
                                     [t[:smallest] for t in accounts], 0.1)
    for m in args.sizes:
        row("bank_accounts", m, *train_ops(cfg, [t[:m] for t in accounts], fixed, forest))

    for h in args.heights:
        c = RunConfig(run=RunSection(seed=args.seed), forest=ForestSection(height=h))
        row("height", h, *train_ops(c, accounts, fixed, pipeline.make_forest(c)))


if __name__ == "__main__":
    main()
