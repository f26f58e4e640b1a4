"""Correlation error at N = 18 for config overrides on a subset of realizations.

Example::

    python scripts/n18_ablation.py '{"sampler": {"n_chains": 512}}' 0,1,2
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

import numpy as np

from tvmc_anneal.runner import LatticeSpec, RunConfig, run_anneal


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("overrides", help="JSON object merged into the RunConfig dict")
    ap.add_argument("indices", help="comma-separated realization indices")
    ap.add_argument("--n-sites", type=int, default=18)
    ap.add_argument("--oracle-cache", type=Path, default=Path("runs/oracle-cache"))
    args = ap.parse_args()

    over = json.loads(args.overrides)
    doc = RunConfig(lattice=LatticeSpec(kind="diamond", n_sites=args.n_sites),
                    realizations=20, mode="both").to_dict()
    for key, val in over.items():
        if isinstance(val, dict):
            doc[key].update(val)
        else:
            doc[key] = val
    cfg = RunConfig.from_dict(doc)

    eps = []
    for idx in (int(x) for x in args.indices.split(",")):
        start = time.perf_counter()
        rec = run_anneal(cfg, idx, oracle_cache=args.oracle_cache)
        eps.append(rec.epsilon_c)
        print(f"{idx} eps {rec.epsilon_c:.4f} R2 {rec.r2_integrated:.4f} "
              f"t {time.perf_counter() - start:.0f}s", flush=True)
    print(f"MEAN {np.mean(eps):.4f} over {len(eps)}", flush=True)


if __name__ == "__main__":
    main()
