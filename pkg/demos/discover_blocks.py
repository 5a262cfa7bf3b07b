"""Recover which context variables matter for two-block stacking, and which parameter each one drives.

Run: python3 demos/discover_blocks.py [--seed N]
"""

from __future__ import annotations

import argparse
import json
import time

from crest.discovery import DiscoveryConfig, discover, score_discovery
from crest.environments import BlocksEnv


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    env = BlocksEnv(2)
    print("context variables:", ", ".join(env.schema.names))
    print("policy parameters:", ", ".join(env.param_names))

    t0 = time.time()
    result = discover(env, DiscoveryConfig(), args.seed)
    print(f"\ndiscovery took {time.time() - t0:.2f}s and {result.evaluations} reward evaluations")
    print(json.dumps(result.structure.to_json(env.schema, env.param_names), indent=2))

    metrics = score_discovery(result.structure, env.truth())
    print("\nagainst the known structure:", metrics)


if __name__ == "__main__":
    main()
