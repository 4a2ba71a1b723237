"""Command-line entry points: train, simulate, fit-probit, compare, cluster, regret."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .bandit import TaskDistribution, read_trajectories_csv, write_trajectories_csv
from .belief import BASELINE_WEIGHTS, BaselineKind, simulate_probit_policy
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .comparison import (BayesFactor, baseline_hypothesis, bayes_factor, hypothesis_from_model,
                         load_human_data, lrla_hypotheses, marginal_loglik, population_bf,
                         write_bf_csv, write_loglik_csv)
from .config import ExperimentConfig, RunManifest, load_config
from .strategy import (CoefficientRow, ProbitFit, coefficient_sd, fit_probit_arrays, mean_shift,
                       observation_arrays, prototype_of, read_coefficients_csv,
                       trajectories_to_arrays, write_coefficients_csv)
from .trainer import evaluate, train

log = logging.getLogger("lrla")

WORKERS_ENV = "LRLA_WORKERS"
DIAG_COLUMNS = ("episode", "loss", "kl", "mean_regret_window")


class UsageError(Exception):
    pass


def nhat_label(nhat) -> str:
    return "none" if nhat is None else str(int(nhat))


def cell_name(nhat, seed) -> str:
    return f"nhat-{nhat_label(nhat)}_seed-{seed}"


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer")


def write_diagnostics_csv(path, diagnostics) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAG_COLUMNS)
        for ep, loss, kl, reg in np.asarray(diagnostics).reshape(-1, 4):
            w.writerow([int(ep), repr(float(loss)), repr(float(kl)), repr(float(reg))])


def _train_cell(args):
    exp, nhat, seed, out_dir = args
    cfg = dataclasses.replace(exp.train, nhat=nhat, seed=seed)
    state = train(cfg, exp.task)
    ckpt = Checkpoint.from_state(state, cfg, exp.task)
    name = cell_name(nhat, seed)
    save_checkpoint(out_dir / f"{name}.ckpt", ckpt)
    write_diagnostics_csv(out_dir / f"{name}_diagnostics.csv", ckpt.diagnostics)
    return name


def cmd_train(exp: ExperimentConfig, out_dir=None) -> RunManifest:
    out = Path(out_dir or exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = [(exp, n, s, out) for n in exp.nhat_grid for s in exp.seeds]
    manifest = RunManifest("train", exp.snapshot(), seeds=list(exp.seeds))
    workers = _workers()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(_train_cell, c) for c in cells]
            results = []
            for c, f in zip(cells, futures):
                try:
                    results.append((c, f.result(), None))
                except Exception as e:  # noqa: BLE001 - recorded per cell
                    results.append((c, None, e))
    else:
        results = []
        for c in cells:
            try:
                results.append((c, _train_cell(c), None))
            except Exception as e:  # noqa: BLE001 - recorded per cell
                results.append((c, None, e))
    for (_, nhat, seed, _), name, err in results:
        if err is not None:
            log.error("training failed for %s: %s", cell_name(nhat, seed), err)
            manifest.failures.append({"cell": cell_name(nhat, seed), "error": repr(err)})
            continue
        manifest.add_file(out / f"{name}.ckpt", out)
        manifest.add_file(out / f"{name}_diagnostics.csv", out)
    manifest.write(out)
    return manifest


def _policy_tag(policy, ckpt: Checkpoint | None = None) -> str:
    if policy == "lrla":
        return f"lrla_nhat-{nhat_label(ckpt.config.nhat)}"
    return policy


def cmd_simulate(exp: ExperimentConfig, policy: str, episodes: int, out_file, ckpt_path=None,
                 seed: int = 0, mode: str = "map") -> RunManifest:
    out_file = Path(out_file)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    dist = exp.task
    if policy == "lrla":
        if ckpt_path is None:
            raise UsageError("--policy lrla requires --ckpt")
        ckpt = load_checkpoint(ckpt_path)
        res = evaluate(ckpt, dist, episodes, mode=mode, seed=seed)
        trajs = res.trajectories(_policy_tag(policy, ckpt), ckpt.config.seed, dist.reward_noise_sd)
        regret = res.mean_regret
    elif policy in {k.value for k in BaselineKind}:
        w = BASELINE_WEIGHTS[BaselineKind(policy)]
        means, actions, rewards = simulate_probit_policy(w, dist, episodes, np.random.default_rng(seed))
        from .bandit import regret_from_arrays, trajectories_from_arrays
        trajs = trajectories_from_arrays(means, actions, rewards, dist.reward_noise_sd, policy, seed=seed)
        regret = float(regret_from_arrays(means, actions).mean()) if episodes else float("nan")
    else:
        raise UsageError(f"unknown policy {policy!r}")
    write_trajectories_csv(out_file, trajs)
    manifest = RunManifest("simulate", {**exp.snapshot(), "policy": policy, "episodes": episodes,
                                        "checkpoint": None if ckpt_path is None else str(ckpt_path),
                                        "mode": mode}, seeds=[seed])
    manifest.summary = {"mean_regret": regret}
    manifest.add_file(out_file, out_file.parent)
    manifest.write(out_file.parent, f"manifest-simulate-{out_file.stem}.json")
    return manifest


def _kind_of(tag: str) -> tuple[str, object]:
    if tag.startswith("lrla_nhat-"):
        raw = tag.split("-", 1)[1]
        return "lrla", (None if raw == "none" else int(raw))
    return "baseline", None


def cmd_fit_probit(exp: ExperimentConfig, out_file, traj=None, human=None) -> RunManifest:
    if (traj is None) == (human is None):
        raise UsageError("give exactly one of --traj or --human")
    out_file = Path(out_file)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    ridge, dist = exp.analysis.ridge, exp.task
    rows, failures = [], []
    if human is not None:
        participants, problems = load_human_data(human, dist.horizon)
        for msg in problems:
            log.warning("%s: %s", human, msg)
        for p in participants:
            X, choices = observation_arrays(p.choices, p.rewards, dist)
            try:
                rows.append(CoefficientRow(str(p.participant_id), "human", fit_probit_arrays(X, choices, ridge)))
            except ValueError as e:
                failures.append({"entity": p.participant_id, "error": str(e)})
    else:
        groups = defaultdict(list)
        for t in read_trajectories_csv(traj, dist.reward_noise_sd):
            groups[(t.source_tag, t.seed)].append(t)
        for (tag, seed), trajs in groups.items():
            kind, nhat = _kind_of(tag)
            actions, rewards = trajectories_to_arrays(trajs)
            X, choices = observation_arrays(actions, rewards, dist)
            entity = tag if seed is None else f"{tag}_seed-{seed}"
            try:
                rows.append(CoefficientRow(entity, kind, fit_probit_arrays(X, choices, ridge), nhat, seed))
            except ValueError as e:
                failures.append({"entity": entity, "error": str(e)})
    for r in rows:
        if r.fit.flagged:
            failures.append({"entity": r.entity_id, "error": r.fit.message})
    write_coefficients_csv(out_file, rows)
    read_coefficients_csv(out_file)  # self-validation
    manifest = RunManifest("fit-probit", {**exp.snapshot(), "input": str(traj or human)})
    manifest.failures = failures
    manifest.add_file(out_file, out_file.parent)
    manifest.write(out_file.parent, f"manifest-fit-probit-{out_file.stem}.json")
    return manifest


def _load_checkpoints(ckpt_dir) -> list[tuple[Path, Checkpoint]]:
    paths = sorted(Path(ckpt_dir).glob("*.ckpt"))
    if not paths:
        raise UsageError(f"no checkpoints found in {ckpt_dir}")
    return [(p, load_checkpoint(p)) for p in paths]


def build_lrla_hypotheses(ckpts, dist, sim_episodes, ridge, seed=0):
    by_nhat = defaultdict(list)
    for path, ck in ckpts:
        fit = hypothesis_from_model(ck, dist, sim_episodes, seed=seed, ridge=ridge)
        by_nhat[ck.config.nhat].append((ck.config.seed, fit))
    # the unconstrained model is not a member of the resource-constrained class
    constrained = {n: v for n, v in by_nhat.items() if n is not None}
    return lrla_hypotheses(constrained), by_nhat


def cmd_compare(exp: ExperimentConfig, human, ckpt_dir, out_dir, seed: int = 0) -> RunManifest:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dist = exp.task
    participants, problems = load_human_data(human, dist.horizon)
    for msg in problems:
        log.warning("%s: %s", human, msg)
    try:
        ckpts = _load_checkpoints(ckpt_dir)
        class_hyps, _ = build_lrla_hypotheses(ckpts, dist, exp.analysis.sim_episodes,
                                              exp.analysis.ridge, seed)
    except Exception as e:
        raise RuntimeError(f"building model hypotheses from {ckpt_dir}: {e}") from e
    if not class_hyps:
        raise UsageError("no resource-constrained (finite nhat) checkpoints to compare")
    baselines = {k: baseline_hypothesis(k) for k in BaselineKind}

    ll_rows, bfs = [], []
    for p in participants:
        for h in class_hyps + list(baselines.values()):
            ll_rows.append((p.participant_id, h.label, marginal_loglik(p, h, dist)))
        bfs.append(bayes_factor(p, class_hyps, baselines[BaselineKind.VALUE], dist))
    write_loglik_csv(out / "logliks.csv", ll_rows)
    write_bf_csv(out / "bayes_factors.csv", bfs)

    pop = {k.value: population_bf(participants, class_hyps, baselines[k], dist)
           for k in (BaselineKind.THOMPSON, BaselineKind.UCB, BaselineKind.VALUE)}
    hist = defaultdict(int)
    for b in bfs:
        hist[nhat_label(b.best_nhat)] += 1
    with open(out / "population.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("versus", "two_log_bf", "very_strong"))
        for k, v in pop.items():
            w.writerow((k, repr(v), int(v > 10.0)))
    with open(out / "best_nhat.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("nhat", "participants"))
        for h in class_hyps:
            w.writerow((nhat_label(h.nhat), hist.get(nhat_label(h.nhat), 0)))

    manifest = RunManifest("compare", {**exp.snapshot(), "human": str(human), "ckpt_dir": str(ckpt_dir)},
                           seeds=[seed])
    manifest.summary = {"population_two_log_bf": pop,
                        "very_strong_participants": sum(b.very_strong for b in bfs),
                        "participants": len(participants)}
    for name in ("logliks.csv", "bayes_factors.csv", "population.csv", "best_nhat.csv"):
        manifest.add_file(out / name, out)
    manifest.write(out)
    return manifest


CLUSTER_COLUMNS = ("entity_id", "cluster", "mode_w1", "mode_w2", "mode_w3", "is_prototype", "bandwidth")


def cmd_cluster(exp: ExperimentConfig, coeffs, out_file, bandwidth=None) -> RunManifest:
    rows = read_coefficients_csv(coeffs)
    if not rows:
        raise UsageError(f"{coeffs} has no coefficient rows")
    out_file = Path(out_file)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    points = np.array([r["w"] for r in rows])
    bw = bandwidth if bandwidth is not None else exp.analysis.bandwidth
    res = mean_shift(points, bw)
    fits = [ProbitFit(r["w"], np.diag(r["sd"] ** 2), r["loglik"], r["n_obs"]) for r in rows]
    protos = {id(prototype_of(res, fits, c)) for c in range(len(res.modes))}
    with open(out_file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CLUSTER_COLUMNS)
        for r, c, f in zip(rows, res.assignments, fits):
            w.writerow([r["entity_id"], int(c), *(repr(float(v)) for v in res.modes[c]),
                        int(id(f) in protos), repr(res.bandwidth)])
    manifest = RunManifest("cluster", {**exp.snapshot(), "coeffs": str(coeffs), "bandwidth": res.bandwidth})
    manifest.summary = {"clusters": int(len(res.modes)), "bandwidth": res.bandwidth}
    manifest.add_file(out_file, out_file.parent)
    manifest.write(out_file.parent, f"manifest-cluster-{out_file.stem}.json")
    return manifest


REGRET_COLUMNS = ("row_type", "nhat", "seed", "episodes", "mean_regret", "sem", "monotone_nonincreasing")


def regret_table(ckpts, dist, episodes, seed=0, mode="map"):
    """Rows of the regret summary: per model, per-nhat mean, references, monotonicity."""
    per_nhat = defaultdict(list)
    rows = []
    for _, ck in ckpts:
        res = evaluate(ck, dist, episodes, mode=mode, seed=seed)
        sem = float(res.regrets.std(ddof=1) / np.sqrt(len(res.regrets))) if episodes > 1 else float("nan")
        rows.append(("model", nhat_label(ck.config.nhat), ck.config.seed, episodes, res.mean_regret, sem, ""))
        per_nhat[ck.config.nhat].append(res.mean_regret)
    finite = sorted(n for n in per_nhat if n is not None)
    prev = None
    for n in finite + ([None] if None in per_nhat else []):
        m = float(np.mean(per_nhat[n]))
        mono = ""
        if n is not None:
            mono = int(prev is None or m <= prev)
            prev = m
        rows.append(("nhat_mean", nhat_label(n), "", episodes, m, float(np.std(per_nhat[n])), mono))
    from .bandit import regret_from_arrays
    means, actions, _ = simulate_probit_policy(BASELINE_WEIGHTS[BaselineKind.VALUE], dist, episodes,
                                               np.random.default_rng(seed))
    rows.append(("reference_value_directed", "", "", episodes,
                 float(regret_from_arrays(means, actions).mean()), "", ""))
    rows.append(("reference_random", "", "", episodes,
                 dist.horizon / 2 * 2 * dist.mean_prior_sd / np.sqrt(np.pi), "", ""))
    return rows


def cmd_regret(exp: ExperimentConfig, ckpt_dir, episodes: int, out_file, seed: int = 0,
               mode=None) -> RunManifest:
    out_file = Path(out_file)
    out_file.parent.mkdir(parents=True, exist_ok=True)
    ckpts = _load_checkpoints(ckpt_dir)
    rows = regret_table(ckpts, exp.task, episodes, seed, mode or exp.analysis.eval_mode)
    with open(out_file, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REGRET_COLUMNS)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    manifest = RunManifest("regret", {**exp.snapshot(), "ckpt_dir": str(ckpt_dir), "episodes": episodes},
                           seeds=[seed])
    manifest.add_file(out_file, out_file.parent)
    manifest.write(out_file.parent, f"manifest-regret-{out_file.stem}.json")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lrla", description=__doc__)
    ap.add_argument("--config", help="INI experiment config (all keys optional)")
    ap.add_argument("--seed", type=int, help="override the config/default seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the (nhat x seed) grid")
    p.add_argument("--out", help="output directory (default: [output] dir)")

    p = sub.add_parser("simulate", help="simulate a policy and export trajectories")
    p.add_argument("--policy", required=True, choices=["value", "thompson", "ucb", "lrla"])
    p.add_argument("--ckpt")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--mode", choices=["map", "posterior-sample"], default="map")
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit-probit", help="fit strategy coefficients")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--traj")
    g.add_argument("--human")
    p.add_argument("--out", required=True)

    p = sub.add_parser("compare", help="Bayesian model comparison on human data")
    p.add_argument("--human", required=True)
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("cluster", help="mean-shift clustering of coefficients")
    p.add_argument("--coeffs", required=True)
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("regret", help="regret summary over trained checkpoints")
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--episodes", type=int, help="default: [analysis] eval_episodes")
    p.add_argument("--mode", choices=["map", "posterior-sample"])
    p.add_argument("--out", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        exp = load_config(args.config)
        seed = args.seed if args.seed is not None else exp.train.seed
        if args.command == "train":
            if args.seed is not None:
                exp = dataclasses.replace(exp, seeds=(args.seed,))
            m = cmd_train(exp, args.out)
            if m.failures:
                print(f"{len(m.failures)} grid cell(s) failed; see manifest", file=sys.stderr)
                return 1
        elif args.command == "simulate":
            cmd_simulate(exp, args.policy, args.episodes, args.out, args.ckpt, seed, args.mode)
        elif args.command == "fit-probit":
            cmd_fit_probit(exp, args.out, args.traj, args.human)
        elif args.command == "compare":
            cmd_compare(exp, args.human, args.ckpt_dir, args.out, seed)
        elif args.command == "cluster":
            cmd_cluster(exp, args.coeffs, args.out, args.bandwidth)
        elif args.command == "regret":
            episodes = args.episodes if args.episodes is not None else exp.analysis.eval_episodes
            cmd_regret(exp, args.ckpt_dir, episodes, args.out, seed, args.mode)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - top-level diagnostic
        log.debug("failure", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
