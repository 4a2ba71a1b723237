"""Write a synthetic choice dataset in the human-data CSV schema.

Participants follow probit policies with coefficients drawn around the
three fixed strategies, which makes the fit/compare/cluster commands
runnable without the original human records.

    python3 scripts/synthetic_human_data.py data/synthetic.csv --participants 44
    lrla fit-probit --human data/synthetic.csv --out out/coeffs.csv
    lrla cluster --coeffs out/coeffs.csv --out out/clusters.csv
"""
import argparse
from pathlib import Path

import numpy as np

from lrla.bandit import TaskDistribution
from lrla.belief import BASELINE_WEIGHTS, BaselineKind
from lrla.comparison import synthetic_participants, write_human_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out")
    ap.add_argument("--participants", type=int, default=44)
    ap.add_argument("--episodes", type=int, default=20)
    ap.add_argument("--jitter", type=float, default=0.1, help="sd of per-participant coefficient noise")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    kinds = list(BaselineKind)
    ws = [np.array(BASELINE_WEIGHTS[kinds[i % len(kinds)]]) + args.jitter * rng.standard_normal(3)
          for i in range(args.participants)]
    ps = synthetic_participants(ws, TaskDistribution(), args.episodes, rng)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_human_csv(args.out, ps)
    print(f"wrote {len(ps)} participants x {args.episodes} episodes to {args.out}")


if __name__ == "__main__":
    main()
