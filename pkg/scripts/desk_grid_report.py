"""Regret and strategy coefficients of a trained grid.

Prints the seed-averaged regret per nhat (MAP mode) and the seed-averaged
probit coefficients of each model's posterior-sample rollouts.

    lrla --config configs/desk_grid.ini train --out runs/desk_grid
    python3 scripts/desk_grid_report.py runs/desk_grid --config configs/desk_grid.ini
"""
import argparse
from collections import defaultdict
from pathlib import Path

import numpy as np

from lrla.checkpoint import load_checkpoint
from lrla.cli import nhat_label, regret_table
from lrla.comparison import hypothesis_from_model
from lrla.config import load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("ckpt_dir")
    ap.add_argument("--config")
    ap.add_argument("--episodes", type=int)
    args = ap.parse_args()
    exp = load_config(args.config)
    episodes = args.episodes or exp.analysis.eval_episodes
    ckpts = [(p, load_checkpoint(p)) for p in sorted(Path(args.ckpt_dir).glob("*.ckpt"))]
    if not ckpts:
        raise SystemExit(f"no checkpoints in {args.ckpt_dir}")

    print(f"regret over {episodes} episodes (MAP mode)")
    for row in regret_table(ckpts, exp.task, episodes):
        kind, nhat, seed, _, mean, sem, mono = row
        if kind != "model":
            print(f"  {kind:<26} {nhat:>5} {mean:8.2f} {mono}")

    fits = defaultdict(list)
    for _, ck in ckpts:
        fits[ck.config.nhat].append(hypothesis_from_model(ck, exp.task, exp.analysis.sim_episodes).w)
    print("seed-averaged probit coefficients (w1 value, w2 relative unc., w3 value/total unc.)")
    for nhat in sorted(fits, key=lambda n: float("inf") if n is None else n):
        w = np.mean(fits[nhat], axis=0)
        print(f"  nhat {nhat_label(nhat):>5}: {w[0]:+.3f} {w[1]:+.3f} {w[2]:+.3f}")


if __name__ == "__main__":
    main()
