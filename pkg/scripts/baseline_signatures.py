"""Probit signatures of the three fixed strategies.

Simulates each baseline on the default task family, fits the choice
regression and prints the coefficients with their Laplace sds.

    python3 scripts/baseline_signatures.py --episodes 1000 --seed 0
"""
import argparse

import numpy as np

from lrla.bandit import TaskDistribution, regret_from_arrays
from lrla.belief import BASELINE_WEIGHTS, BaselineKind, simulate_probit_policy
from lrla.strategy import coefficient_sd, fit_probit_arrays, observation_arrays


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    dist = TaskDistribution()
    print(f"{'policy':<10} {'regret':>7}   w1 (sd)          w2 (sd)          w3 (sd)")
    for kind in BaselineKind:
        means, a, r = simulate_probit_policy(BASELINE_WEIGHTS[kind], dist, args.episodes,
                                             np.random.default_rng(args.seed))
        fit = fit_probit_arrays(*observation_arrays(a, r, dist))
        sd = coefficient_sd(fit)
        cells = "  ".join(f"{w:+.3f} ({s:.3f})" for w, s in zip(fit.w, sd))
        print(f"{kind.value:<10} {regret_from_arrays(means, a).mean():7.2f}   {cells}")


if __name__ == "__main__":
    main()
