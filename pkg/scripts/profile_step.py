"""Profile a few TDVP steps at a given size and print the hottest calls."""

from __future__ import annotations

import argparse
import cProfile
import pstats

import numpy as np

from tvmc_anneal.ansatz import init_driving_ground, perturb_factors
from tvmc_anneal.lattice import diamond_manifest, sample_couplings
from tvmc_anneal.model import ProblemHamiltonian, make_schedule
from tvmc_anneal.tdvp import TdvpConfig, TdvpEngine


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-sites", type=int, default=18)
    ap.add_argument("--steps", type=int, default=5)
    ap.add_argument("--top", type=int, default=25)
    args = ap.parse_args()

    n = args.n_sites
    ham = ProblemHamiltonian(sample_couplings(diamond_manifest(n), 1),
                             make_schedule("trigonometric", 7.0))
    psi = perturb_factors(init_driving_ground(n, (1, 2, 4)), 0.02, np.random.default_rng(0))
    cfg = TdvpConfig(n_steps=100, validation_every=0)
    engine = TdvpEngine(ham, cfg, seed=1)
    psi, _ = engine.step(psi, 0.0)  # compile and thermalize outside the profile

    prof = cProfile.Profile()
    prof.enable()
    for k in range(1, args.steps + 1):
        psi, _ = engine.step(psi, k * cfg.dt)
    prof.disable()
    pstats.Stats(prof).sort_stats("cumtime").print_stats(args.top)


if __name__ == "__main__":
    main()
