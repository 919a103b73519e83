"""Print the binomial-tail and finality tables from the closed forms.

    python scripts/reproduce_tables.py [--x-rule n-1/3|n/3]
"""

import argparse
from fractions import Fraction

from posbft.analysis import X_RULES, binomial_tail, finality_probability, threshold


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--x-rule", choices=sorted(X_RULES), default="n-1/3")
    args = ap.parse_args()

    print("n\tx\tP(X >= x) %")
    for n in (200, 300, 400, 500):
        x = threshold(n, args.x_rule)
        print(f"{n}\t{x}\t{100 * binomial_tail(n, Fraction(1, 4), x):.4f}")
    print()
    print("d\tfinal % (f/n -> 1/3)\tfinal % (n = 16, f = 5)")
    for d in range(1, 7):
        print(f"{d}\t{100 * finality_probability(d):.2f}\t{100 * finality_probability(d, 5, 16):.2f}")


if __name__ == "__main__":
    main()
