"""Two-armed Gaussian bandit tasks, episode rollouts and regret accounting."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class TaskDistribution:
    """Generative prior over bandit tasks.

    Arm means are drawn i.i.d. from N(mean_prior_mu, mean_prior_sd**2) and each
    pull returns the chosen arm's mean plus N(0, reward_noise_sd**2) noise.
    Zero standard deviations are accepted here (degenerate tasks are handy in
    tests); belief tracking rejects them.
    """

    mean_prior_mu: float = 0.0
    mean_prior_sd: float = 10.0
    reward_noise_sd: float = math.sqrt(10.0)
    horizon: int = 10
    num_arms: int = 2

    def __post_init__(self):
        if not (self.mean_prior_sd >= 0 and math.isfinite(self.mean_prior_sd)):
            raise ValueError(f"mean_prior_sd must be >= 0, got {self.mean_prior_sd}")
        if not (self.reward_noise_sd >= 0 and math.isfinite(self.reward_noise_sd)):
            raise ValueError(f"reward_noise_sd must be >= 0, got {self.reward_noise_sd}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if self.num_arms < 1:
            raise ValueError(f"num_arms must be >= 1, got {self.num_arms}")


@dataclass(frozen=True)
class BanditTask:
    arm_means: tuple[float, ...]
    reward_noise_sd: float

    @property
    def num_arms(self) -> int:
        return len(self.arm_means)


@dataclass(frozen=True)
class StepRecord:
    step_index: int
    action: int
    reward: float
    q_values: Optional[tuple[float, ...]] = None
    belief_factors: Optional[object] = None


@dataclass(frozen=True)
class Trajectory:
    task: BanditTask
    steps: tuple[StepRecord, ...]
    source_tag: str = ""
    seed: Optional[int] = None

    @property
    def actions(self) -> np.ndarray:
        return np.array([s.action for s in self.steps], dtype=np.int64)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps], dtype=np.float64)


# A policy sees the episode history so far and returns an arm index, or a
# pair (arm index, q-values) when it has Q-values to report.
Policy = Callable[[Sequence[StepRecord]], object]


def make_streams(seed, names: Iterable[str] = ("tasks", "rewards", "policy", "params")) -> dict:
    """Independent generators per consumer, so adding one never perturbs another."""
    names = list(names)
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def sample_task(dist: TaskDistribution, rng: np.random.Generator) -> BanditTask:
    means = dist.mean_prior_mu + dist.mean_prior_sd * rng.standard_normal(dist.num_arms)
    return BanditTask(tuple(float(m) for m in means), dist.reward_noise_sd)


def sample_arm_means(dist: TaskDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorised task sampling, shape (n, num_arms)."""
    return dist.mean_prior_mu + dist.mean_prior_sd * rng.standard_normal((n, dist.num_arms))


def _check_action(action, num_arms: int) -> int:
    if isinstance(action, (bool, np.bool_)) or not isinstance(action, (int, np.integer)):
        raise ValueError(f"action must be an integer arm index, got {action!r}")
    if not 0 <= action < num_arms:
        raise ValueError(f"action {action} out of range for {num_arms} arms")
    return int(action)


def step(task: BanditTask, action: int, rng: np.random.Generator) -> float:
    action = _check_action(action, task.num_arms)
    return float(task.arm_means[action] + task.reward_noise_sd * rng.standard_normal())


def rollout(task: BanditTask, policy: Policy, horizon: int, rng: np.random.Generator,
            source_tag: str = "") -> Trajectory:
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    steps: list[StepRecord] = []
    for t in range(horizon):
        out = policy(tuple(steps))
        q = None
        if isinstance(out, tuple):
            out, q = out
            q = None if q is None else tuple(float(v) for v in q)
        action = _check_action(out, task.num_arms)
        reward = step(task, action, rng)
        steps.append(StepRecord(t, action, reward, q))
    return Trajectory(task, tuple(steps), source_tag)


def episode_regret(traj: Trajectory) -> float:
    """Pseudo-regret: sum of gaps between the best latent mean and the chosen one."""
    means = np.asarray(traj.task.arm_means, dtype=np.float64)
    return float(np.sum(means.max() - means[traj.actions]))


def regret_from_arrays(arm_means: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Per-episode pseudo-regret for arm_means (E, A) and actions (E, T)."""
    chosen = np.take_along_axis(arm_means, actions, axis=1)
    return np.sum(arm_means.max(axis=1, keepdims=True) - chosen, axis=1)


def trajectories_from_arrays(arm_means, actions, rewards, reward_noise_sd: float,
                             source_tag: str = "", q_values=None, seed=None) -> list[Trajectory]:
    """Pack (E, A) means and (E, T) actions/rewards into Trajectory records."""
    arm_means = np.asarray(arm_means, dtype=np.float64)
    actions = np.asarray(actions)
    rewards = np.asarray(rewards, dtype=np.float64)
    out = []
    for e in range(actions.shape[0]):
        steps = tuple(
            StepRecord(t, int(actions[e, t]), float(rewards[e, t]),
                       None if q_values is None else tuple(float(v) for v in q_values[e, t]))
            for t in range(actions.shape[1])
        )
        task = BanditTask(tuple(float(m) for m in arm_means[e]), reward_noise_sd)
        out.append(Trajectory(task, steps, source_tag, seed))
    return out


# -- CSV export ---------------------------------------------------------------

TRAJECTORY_COLUMNS = ("source_tag", "seed", "episode", "trial", "action", "reward",
                      "mu0", "mu1", "q0", "q1")


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def write_trajectories_csv(path, trajectories: Sequence[Trajectory]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for e, traj in enumerate(trajectories):
            mu = traj.task.arm_means
            seed = "" if traj.seed is None else traj.seed
            for s in traj.steps:
                q = s.q_values or (None, None)
                w.writerow([traj.source_tag, seed, e, s.step_index,
                            s.action, _fmt(s.reward), _fmt(mu[0]), _fmt(mu[1]),
                            _fmt(q[0]), _fmt(q[1])])


def read_trajectories_csv(path, reward_noise_sd: float = math.sqrt(10.0)) -> list[Trajectory]:
    """Inverse of write_trajectories_csv; episodes keyed by (source_tag, seed, episode)."""
    grouped: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRAJECTORY_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            key = (row["source_tag"], row["seed"], int(row["episode"]))
            grouped.setdefault(key, []).append(row)
    out = []
    for (tag, seed, _), rows in grouped.items():
        rows.sort(key=lambda r: int(r["trial"]))
        steps = []
        for r in rows:
            q = None
            if r["q0"] != "":
                q = (float(r["q0"]), float(r["q1"]))
            steps.append(StepRecord(int(r["trial"]), int(r["action"]), float(r["reward"]), q))
        task = BanditTask((float(rows[0]["mu0"]), float(rows[0]["mu1"])), reward_noise_sd)
        out.append(Trajectory(task, tuple(steps), tag, int(seed) if seed != "" else None))
    return out
