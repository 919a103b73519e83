"""Withheld view-change attack by an f+1 coalition.

Runs the bundled footnote scenario (or a file given on the command line) and
lists every revert seen by an honest node.
"""

import argparse

from posbft.cli import read_scenario
from posbft.simnet.engine import Simulation


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario", nargs="?", default="footnote")
    args = ap.parse_args()

    sim = Simulation(read_scenario(args.scenario))
    trace = sim.run()
    for ev in trace.events():
        if ev.kind == "revert" and sim.behaviors[ev.node].kind == "honest":
            print(f"t={ev.time}ms node {ev.node} dropped {ev.fields['depth']} blocks "
                  f"({ev.fields['old']} -> {ev.fields['new']})")
    for ev in trace.events():
        if ev.kind == "vc-quorum":
            print(f"t={ev.time}ms node {ev.node} saw a view-change quorum for height "
                  f"{ev.fields['h']} view {ev.fields['v']}")
            break
    m = trace.metrics
    print(f"height {m['height']}, finalized macros {m['finalized_macros']}, "
          f"safety violation {m['safety_violation']}")


if __name__ == "__main__":
    main()
