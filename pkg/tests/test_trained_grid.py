"""Behaviour of the trained desk-scale grid (shares the cached grid with the acceptance suite)."""
from collections import defaultdict

import numpy as np
import pytest

from lrla.checkpoint import load_checkpoint
from lrla.trainer import evaluate

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def grid(desk_grid):
    exp, out = desk_grid
    return exp, [load_checkpoint(p) for p in sorted(out.glob("*.ckpt"))]


@pytest.fixture(scope="module")
def seed_mean_regret(grid):
    exp, ckpts = grid
    by = defaultdict(list)
    for ck in ckpts:
        by[ck.config.nhat].append(evaluate(ck, exp.task, 1000, mode="map", seed=0).mean_regret)
    return {n: float(np.mean(v)) for n, v in by.items()}


def test_final_kl_smaller_under_stronger_regularisation(grid):
    _, ckpts = grid
    kl = defaultdict(list)
    for ck in ckpts:
        kl[ck.config.nhat].append(ck.diagnostics[-100:, 2].mean())
    assert np.mean(kl[256]) < np.mean(kl[8192])


def test_larger_nhat_lower_regret(seed_mean_regret):
    assert seed_mean_regret[8192] < seed_mean_regret[256]


def test_unconstrained_model_within_one_unit_of_every_finite_model(seed_mean_regret):
    best_finite = min(v for n, v in seed_mean_regret.items() if n is not None)
    assert seed_mean_regret[None] <= best_finite + 1.0


def test_checkpoints_record_training_config(grid):
    exp, ckpts = grid
    assert len(ckpts) == len(exp.nhat_grid) * len(exp.seeds)
    for ck in ckpts:
        assert ck.episode == exp.train.episodes_total
        assert ck.diagnostics.shape == (exp.train.episodes_total, 4)
        assert (ck.config.hidden_dim, ck.config.kl_warmup) == (exp.train.hidden_dim, exp.train.kl_warmup)
