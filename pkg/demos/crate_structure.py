"""Discover the relevant variables for crate-lid opening, where the lid color is a distractor.

Run: python3 demos/crate_structure.py [--seeds 5]
"""

from __future__ import annotations

import argparse
from collections import Counter

from crest.discovery import DiscoveryConfig, discover
from crest.environments import CrateEnv


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=5)
    args = parser.parse_args()

    env = CrateEnv()
    counts: Counter[str] = Counter()
    for seed in range(args.seeds):
        result = discover(env, DiscoveryConfig(), seed)
        names = [env.schema.variables[i].name for i in sorted(result.structure.relevant)]
        counts.update(names)
        print(f"seed {seed}: relevant = {names} ({result.inconclusive} inconclusive interventions)")

    print("\nhow often each variable was flagged:")
    for name in env.schema.names:
        if counts[name]:
            print(f"  {name:>8}: {counts[name]}/{args.seeds}")
    colors = [n for n in env.schema.names if n.split("_")[0] in ("red", "green", "blue")]
    print(f"  never flagged: {len(env.schema.names) - len(counts)} of {len(env.schema.names)} variables")
    print(f"  color variables flagged: {sum(counts[n] > 0 for n in colors)} of {len(colors)}")


if __name__ == "__main__":
    main()
