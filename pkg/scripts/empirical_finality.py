"""Measure how often f equivocators own d consecutive micro slots.

Compares the windowed frequency against (f/n)^d and prints a z-score per
depth. The defaults match the acceptance run (n = 16, f = 5, 20,500 blocks,
about 1.5 minutes).
"""

import argparse
import math
import time

from posbft.simnet.config import Behavior, SimConfig
from posbft.simnet.engine import Simulation


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--f", type=int, default=5)
    ap.add_argument("--blocks", type=int, default=20_500)
    ap.add_argument("--epoch", type=int, default=50)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()

    n, f = args.n, args.f
    config = SimConfig(rng_seed=args.seed, n_validators=n, epoch_length=args.epoch,
                       duration_blocks=args.blocks, list_mode="fixed", punishments=False,
                       trace_events=False,
                       behaviors=tuple((i, Behavior("equivocator")) for i in range(n - f, n)))
    start = time.perf_counter()
    m = Simulation(config).run().metrics
    print(f"# {m['micro_blocks']} micro blocks in {time.perf_counter() - start:.0f}s")
    print("d\thits\twindows\tfrequency\t(f/n)^d\tz")
    for d, (hits, trials) in sorted(m["malicious_windows"].items(), key=lambda kv: int(kv[0])):
        p = (f / n) ** int(d)
        z = (hits / trials - p) / math.sqrt(p * (1 - p) / trials)
        print(f"{d}\t{hits}\t{trials}\t{hits / trials:.5f}\t{p:.5f}\t{z:+.2f}")


if __name__ == "__main__":
    main()
