"""Conjugate-Gaussian belief tracking and the probit-form baseline strategies.

Each arm's mean gets an independent normal prior; observing reward r on an
arm with known noise variance s2 updates (m, v) to

    v' = 1 / (1/v + 1/s2),   m' = v' * (m/v + r/s2).

From the two posteriors we derive the value difference V = m0 - m1, the
relative uncertainty RU = sd0 - sd1 and the total uncertainty
TU = sqrt(v0 + v1).  The baselines choose arm 0 with probability
Phi(V) (value-directed), Phi(V/TU) (Thompson) or Phi(V + RU) (UCB).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .bandit import StepRecord, TaskDistribution, sample_arm_means

_SQRT2 = math.sqrt(2.0)


def phi(x):
    """Standard normal CDF via the complementary error function."""
    out = 0.5 * special.erfc(-np.asarray(x, dtype=np.float64) / _SQRT2)
    return float(out) if np.ndim(out) == 0 else out


def log_phi(x):
    """log Phi(x), accurate deep into the lower tail.

    For x < 0 we use erfc(u) = erfcx(u) * exp(-u**2), so the Gaussian factor is
    taken in log space and nothing underflows.
    """
    x = np.asarray(x, dtype=np.float64)
    neg = x < 0
    out = np.empty_like(x)
    xn = x[neg]
    out[neg] = np.log(0.5 * special.erfcx(-xn / _SQRT2)) - 0.5 * xn * xn
    out[~neg] = np.log1p(-0.5 * special.erfc(x[~neg] / _SQRT2))
    return float(out) if out.ndim == 0 else out


def log_normal_pdf(x):
    x = np.asarray(x, dtype=np.float64)
    return -0.5 * x * x - 0.5 * math.log(2 * math.pi)


def inverse_mills(x):
    """phi(x) / Phi(x), stable for very negative x."""
    return np.exp(log_normal_pdf(x) - log_phi(x))


@dataclass(frozen=True)
class BeliefState:
    mean: tuple[float, ...]
    var: tuple[float, ...]
    noise_var: float


@dataclass(frozen=True)
class Factors:
    v: float
    ru: float
    tu: float

    def regressors(self) -> np.ndarray:
        """Probit design row (V, RU, V/TU)."""
        return np.array([self.v, self.ru, self.v / self.tu])


class BaselineKind(str, enum.Enum):
    VALUE = "value"
    THOMPSON = "thompson"
    UCB = "ucb"


# Coefficients on (V, RU, V/TU) that reproduce each baseline exactly.
BASELINE_WEIGHTS = {
    BaselineKind.VALUE: (1.0, 0.0, 0.0),
    BaselineKind.THOMPSON: (0.0, 0.0, 1.0),
    BaselineKind.UCB: (1.0, 1.0, 0.0),
}


def init_belief(dist: TaskDistribution) -> BeliefState:
    if dist.mean_prior_sd <= 0:
        raise ValueError("belief tracking needs mean_prior_sd > 0")
    if dist.reward_noise_sd <= 0:
        raise ValueError("belief tracking needs reward_noise_sd > 0")
    n = dist.num_arms
    return BeliefState((float(dist.mean_prior_mu),) * n,
                       (float(dist.mean_prior_sd) ** 2,) * n,
                       float(dist.reward_noise_sd) ** 2)


def update_belief(b: BeliefState, action: int, reward: float) -> BeliefState:
    if not 0 <= action < len(b.mean):
        raise ValueError(f"action {action} out of range")
    if not math.isfinite(reward):
        raise ValueError(f"reward must be finite, got {reward}")
    m, v = b.mean[action], b.var[action]
    new_var = 1.0 / (1.0 / v + 1.0 / b.noise_var)
    new_mean = new_var * (m / v + reward / b.noise_var)
    mean, var = list(b.mean), list(b.var)
    mean[action], var[action] = new_mean, new_var
    return BeliefState(tuple(mean), tuple(var), b.noise_var)


def compute_factors(b: BeliefState) -> Factors:
    if len(b.mean) != 2:
        raise ValueError("factors are defined for two arms")
    s0, s1 = math.sqrt(b.var[0]), math.sqrt(b.var[1])
    return Factors(b.mean[0] - b.mean[1], s0 - s1, math.sqrt(b.var[0] + b.var[1]))


def baseline_choice_prob(kind: BaselineKind, f: Factors) -> float:
    kind = BaselineKind(kind)
    if kind is BaselineKind.VALUE:
        return phi(f.v)
    if kind is BaselineKind.THOMPSON:
        return phi(f.v / f.tu)
    return phi(f.v + f.ru)


def belief_from_history(history: Sequence[StepRecord], dist: TaskDistribution) -> BeliefState:
    b = init_belief(dist)
    for s in history:
        b = update_belief(b, s.action, s.reward)
    return b


def baseline_policy(kind: BaselineKind, dist: TaskDistribution, rng: np.random.Generator):
    """Policy for `rollout`: track beliefs over the shown history, sample arm 0 w.p. Phi(.)."""
    kind = BaselineKind(kind)

    def policy(history: Sequence[StepRecord]) -> int:
        p0 = baseline_choice_prob(kind, compute_factors(belief_from_history(history, dist)))
        return 0 if rng.random() < p0 else 1

    return policy


# -- vectorised paths -------------------------------------------------------

def factors_from_arrays(actions, rewards, dist: TaskDistribution) -> np.ndarray:
    """Factors (V, RU, TU) seen before each choice, shape (E, T, 3).

    Only the chosen arm is updated after each trial.
    """
    actions = np.asarray(actions)
    rewards = np.asarray(rewards, dtype=np.float64)
    if not np.all(np.isfinite(rewards)):
        raise ValueError("rewards must be finite")
    E, T = actions.shape
    b0 = init_belief(dist)
    mean = np.full((E, 2), b0.mean[0])
    var = np.full((E, 2), b0.var[0])
    out = np.empty((E, T, 3))
    rows = np.arange(E)
    for t in range(T):
        sd = np.sqrt(var)
        out[:, t, 0] = mean[:, 0] - mean[:, 1]
        out[:, t, 1] = sd[:, 0] - sd[:, 1]
        out[:, t, 2] = np.sqrt(var[:, 0] + var[:, 1])
        a = actions[:, t]
        m, v = mean[rows, a], var[rows, a]
        new_var = 1.0 / (1.0 / v + 1.0 / b0.noise_var)
        mean[rows, a] = new_var * (m / v + rewards[:, t] / b0.noise_var)
        var[rows, a] = new_var
    return out


def design_matrix(factors: np.ndarray) -> np.ndarray:
    """Map (..., 3) factors (V, RU, TU) to probit regressors (V, RU, V/TU)."""
    f = np.asarray(factors, dtype=np.float64)
    return np.stack([f[..., 0], f[..., 1], f[..., 0] / f[..., 2]], axis=-1)


def simulate_probit_policy(w, dist: TaskDistribution, episodes: int, rng: np.random.Generator,
                           arm_means: np.ndarray | None = None):
    """Roll out the policy p(arm 0) = Phi(w . (V, RU, V/TU)) on fresh tasks.

    Returns (arm_means (E, 2), actions (E, T), rewards (E, T)).  With the
    weights in BASELINE_WEIGHTS this is the corresponding baseline strategy.
    """
    w = np.asarray(w, dtype=np.float64)
    task_rng, reward_rng, policy_rng = rng.spawn(3)
    if arm_means is None:
        arm_means = sample_arm_means(dist, episodes, task_rng)
    E, T = arm_means.shape[0], dist.horizon
    b0 = init_belief(dist)
    mean = np.full((E, 2), b0.mean[0])
    var = np.full((E, 2), b0.var[0])
    actions = np.empty((E, T), dtype=np.int64)
    rewards = np.empty((E, T))
    rows = np.arange(E)
    for t in range(T):
        sd = np.sqrt(var)
        v = mean[:, 0] - mean[:, 1]
        x = np.stack([v, sd[:, 0] - sd[:, 1], v / np.sqrt(var[:, 0] + var[:, 1])], axis=-1)
        p0 = phi(x @ w)
        a = np.where(policy_rng.random(E) < p0, 0, 1)
        r = arm_means[rows, a] + dist.reward_noise_sd * reward_rng.standard_normal(E)
        actions[:, t], rewards[:, t] = a, r
        m, vv = mean[rows, a], var[rows, a]
        new_var = 1.0 / (1.0 / vv + 1.0 / b0.noise_var)
        mean[rows, a] = new_var * (m / vv + r / b0.noise_var)
        var[rows, a] = new_var
    return arm_means, actions, rewards
