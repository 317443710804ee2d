"""Expected red leaves against Monte Carlo over a grid of pool sizes and heights.

    python3 scripts/lemma_table.py --trials 2000
"""

import argparse

from privforest import analysis


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--cs", type=int, nargs="+", default=[5, 10, 20])
    p.add_argument("--cb", type=int, nargs="+", default=[1, 2, 4])
    p.add_argument("--heights", type=int, nargs="+", default=[2, 4, 6])
    p.add_argument("--tau", type=int, default=12)
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    print(f"{'c_s':>4} {'c_b':>4} {'h':>3} {'E per tree':>11} {'MC mean':>9} {'stderr':>8} "
          f"{'z':>6} {'E forest':>10}")
    for c_s in args.cs:
        for c_b in args.cb:
            for h in args.heights:
                exp = analysis.expected_red_leaves(c_s, c_b, h)
                mc = analysis.monte_carlo_red_leaves(args.seed, c_s, c_b, h, args.trials)
                z = (mc.mean - exp) / mc.stderr if mc.stderr else 0.0
                print(f"{c_s:>4} {c_b:>4} {h:>3} {exp:>11.3f} {mc.mean:>9.3f} {mc.stderr:>8.3f} "
                      f"{z:>6.2f} {exp * args.tau:>10.2f}")


if __name__ == "__main__":
    main()
