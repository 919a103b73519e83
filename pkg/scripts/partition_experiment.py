"""Split the network so one side owns the next z slots, then heal it.

Prints who produced what during the window and how long the nodes took to
agree on one head after it closed.
"""

import argparse
from collections import Counter

from posbft.simnet.config import SimConfig
from posbft.simnet.engine import Simulation, engineer_partition


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--z", type=int, default=3)
    ap.add_argument("--n", type=int, default=4)
    ap.add_argument("--seed", type=int, default=5)
    ap.add_argument("--length-ms", type=int, default=5000)
    args = ap.parse_args()

    base = SimConfig(rng_seed=args.seed, n_validators=args.n, duration_blocks=40, list_mode="fixed")
    config, plan = engineer_partition(base, args.z, args.length_ms)
    print(f"split after height {plan.height}: {list(plan.group)} own {list(plan.owners)}, "
          f"next owner {plan.next_owner}; window {plan.start_ms}-{plan.end_ms}ms")
    trace = Simulation(config).run()
    made = Counter()
    heads: dict[int, str] = {}
    agreed = None
    for ev in trace.events():
        if ev.kind == "produce" and plan.start_ms <= ev.time < plan.end_ms:
            made[ev.node] += 1
        elif ev.kind == "head":
            heads[ev.node] = ev.fields["block"]
            same = len(heads) == args.n and len(set(heads.values())) == 1
            if not same:
                agreed = None
            elif agreed is None and ev.time >= plan.end_ms:
                agreed = ev.time
    for node in range(args.n):
        side = "split side" if node in plan.group else "other side"
        print(f"node {node} ({side}): {made[node]} blocks during the window")
    print(f"one head again {agreed - plan.end_ms}ms after the heal" if agreed is not None
          else "nodes never agreed again")
    print(f"safety violation: {trace.metrics['safety_violation']}")


if __name__ == "__main__":
    main()
