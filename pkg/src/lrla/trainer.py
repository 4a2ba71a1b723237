"""Meta-training of the variational Q-network with n-step targets from a MAP target net.

The loss minimised per update is

    mean_t (y_t - Q(X_t, a_t))**2 / (2 sigma_y**2) + KL(q || p) / nhat

with one shared posterior draw for the squared-error term.  nhat=None trains
the unconstrained model (KL weight exactly 0).
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .bandit import TaskDistribution, make_streams, regret_from_arrays, sample_arm_means
from .net import NetParams, NetShape, backward_episode, encode_episode, forward_episode, greedy_rollout
from .varbayes import (HorseshoePrior, VariationalPosterior, grad_elbo_terms, init_posterior,
                       kl_and_grad, map_params, sample_params)

log = logging.getLogger(__name__)

STREAMS = ("init", "tasks", "rewards", "rollout_params", "loss_params", "kl")
REGRET_WINDOW = 100
SCALE_PHI = ("group_loc", "group_logscale", "global_loc", "global_logscale")


@dataclass(frozen=True)
class TrainConfig:
    nhat: Optional[int] = 1024
    sigma_y: float = 1.0
    n_step: int = 5
    gamma: float = 0.95
    parallel_envs: int = 16
    episodes_total: int = 20000
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    target_sync_every: int = 100
    seed: int = 0
    hidden_dim: int = 64
    reward_scale: float = 10.0
    tau0: float = 1e-5
    kl_samples: int = 1
    init_sd: float = 0.1
    scale_lr_multiplier: float = 1.0
    init_global_scale: Optional[float] = None
    kl_warmup: int = 0  # rounds over which the KL weight ramps linearly up to 1/nhat

    def __post_init__(self):
        if self.nhat is not None and self.nhat <= 0:
            raise ValueError("nhat must be positive (or None for the unconstrained model)")
        checks = [self.sigma_y > 0, self.n_step >= 1, 0 < self.gamma <= 1,
                  self.parallel_envs >= 1, self.episodes_total >= 0, self.learning_rate >= 0,
                  self.target_sync_every >= 1, self.hidden_dim >= 1, self.reward_scale > 0,
                  self.tau0 > 0, self.kl_samples >= 1, self.init_sd > 0,
                  self.scale_lr_multiplier > 0, self.kl_warmup >= 0]
        if not all(checks):
            raise ValueError(f"invalid TrainConfig: {self}")

    @property
    def kl_weight(self) -> float:
        return 0.0 if self.nhat is None else 1.0 / self.nhat

    def kl_weight_at(self, episode: int) -> float:
        if self.kl_warmup == 0:
            return self.kl_weight
        return self.kl_weight * min(1.0, (episode + 1) / self.kl_warmup)


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    lr_multipliers: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> None:
        """In-place update; keys are visited in sorted order so results are order-stable."""
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k in sorted(params):
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            lr = self.lr * self.lr_multipliers.get(k, 1.0)
            params[k] -= lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


@dataclass
class TransitionBatch:
    inputs: np.ndarray     # (T, k, D) network inputs
    actions: np.ndarray    # (k, T)
    rewards: np.ndarray    # (k, T) raw reward units
    arm_means: np.ndarray  # (k, A)
    targets: np.ndarray    # (k, T) in scaled units

    @property
    def num_transitions(self) -> int:
        return self.actions.size


@dataclass
class TrainState:
    posterior: VariationalPosterior
    target_params: NetParams
    optimizer: Adam
    episode: int = 0
    diagnostics: list = field(default_factory=list)  # (episode, loss, kl, mean_regret_window)
    regrets: list = field(default_factory=list)
    streams: dict = field(default_factory=dict, repr=False)


def nstep_targets(rewards, target_q, n: int, gamma: float) -> np.ndarray:
    """n-step returns y_t, truncated at the episode end.

    rewards (..., T) and target_q (..., T, A), where target_q[t] is the
    target net's output after seeing the history up to step t.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    r = np.asarray(rewards, dtype=np.float64)
    tq = np.asarray(target_q, dtype=np.float64)
    T = r.shape[-1]
    boot = tq.max(axis=-1)
    y = np.zeros_like(r)
    for t in range(T):
        end = min(t + n, T)
        disc = gamma ** np.arange(end - t)
        y[..., t] = r[..., t:end] @ disc
        if t + n < T:
            y[..., t] += gamma ** n * boot[..., t + n]
    return y


def init_state(cfg: TrainConfig, dist: TaskDistribution) -> TrainState:
    streams = make_streams(cfg.seed, STREAMS)
    shape = NetShape.for_arms(dist.num_arms, cfg.hidden_dim)
    q = init_posterior(shape, HorseshoePrior(cfg.tau0), streams["init"], cfg.init_sd,
                       cfg.init_global_scale)
    mult = {k: cfg.scale_lr_multiplier for k in SCALE_PHI}
    opt = Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, lr_multipliers=mult)
    return TrainState(q, map_params(q), opt, streams=streams)


def collect_episodes(state: TrainState, cfg: TrainConfig, dist: TaskDistribution,
                     rng: Optional[dict] = None) -> TransitionBatch:
    """k fresh tasks, each played greedily by its own posterior draw held for the episode."""
    rng = rng or state.streams
    k = cfg.parallel_envs
    means = sample_arm_means(dist, k, rng["tasks"])
    draw = sample_params(state.posterior, rng["rollout_params"], n=k)
    actions, rewards, _ = greedy_rollout(draw.params, means, dist.reward_noise_sd, dist.horizon,
                                         rng["rewards"], cfg.reward_scale)
    inputs = encode_episode(actions, rewards, cfg.reward_scale, dist.num_arms)
    target_q, _ = forward_episode(state.target_params, inputs)
    y = nstep_targets(rewards / cfg.reward_scale, np.transpose(target_q, (1, 0, 2)),
                      cfg.n_step, cfg.gamma)
    return TransitionBatch(inputs, actions, rewards, means, y)


def likelihood_loss(params: NetParams, batch: TransitionBatch, sigma_y: float):
    """Mean scaled squared TD error and its gradient w.r.t. params."""
    q, tape = forward_episode(params, batch.inputs)   # (T, k, A)
    T, k = q.shape[:2]
    acts = batch.actions.T                             # (T, k)
    pred = np.take_along_axis(q, acts[..., None], axis=2)[..., 0]
    resid = batch.targets.T - pred
    M = T * k
    loss = float(np.sum(resid * resid)) / (2.0 * sigma_y ** 2 * M)
    dq = np.zeros_like(q)
    np.put_along_axis(dq, acts[..., None], (-resid / (sigma_y ** 2 * M))[..., None], axis=2)
    return loss, tape, dq


def objective(batch: TransitionBatch, sample, q: VariationalPosterior, cfg: TrainConfig,
              kl: Optional[float] = None, rng: Optional[np.random.Generator] = None) -> float:
    """Scalar loss for one posterior draw; kl is estimated with rng if not given."""
    lik, _, _ = likelihood_loss(sample.params, batch, cfg.sigma_y)
    if cfg.kl_weight == 0.0:
        return lik
    if kl is None:
        kl = kl_and_grad(q, HorseshoePrior(cfg.tau0), rng, cfg.kl_samples)[0]
    return lik + cfg.kl_weight * kl


def train_step(state: TrainState, batch: TransitionBatch, cfg: TrainConfig,
               rng: Optional[dict] = None) -> TrainState:
    rng = rng or state.streams
    q = state.posterior
    sample = sample_params(q, rng["loss_params"])
    lik, tape, dq = likelihood_loss(sample.params, batch, cfg.sigma_y)
    kl, kl_grad = kl_and_grad(q, HorseshoePrior(cfg.tau0), rng["kl"], cfg.kl_samples)
    beta = cfg.kl_weight_at(state.episode)
    loss = lik + beta * kl
    if not math.isfinite(loss):
        raise FloatingPointError(
            f"non-finite loss at episode {state.episode}: likelihood={lik}, kl={kl}")
    lik_grad = backward_episode(tape, dq)
    grads = grad_elbo_terms(q, sample, lik_grad, kl_grad, beta)
    state.optimizer.step(q.phi, grads)

    state.episode += 1
    if state.episode % cfg.target_sync_every == 0:
        state.target_params = map_params(q)
    state.regrets.append(float(regret_from_arrays(batch.arm_means, batch.actions).mean()))
    window = state.regrets[-REGRET_WINDOW:]
    state.diagnostics.append((state.episode, loss, kl, float(np.mean(window))))
    return state


def train(cfg: TrainConfig, dist: TaskDistribution = TaskDistribution(),
          state: Optional[TrainState] = None, progress_every: int = 0) -> TrainState:
    """Collect-then-update until cfg.episodes_total update rounds are done.

    One "episode" is a round of cfg.parallel_envs simulated episodes followed
    by a single parameter update.
    """
    state = state or init_state(cfg, dist)
    while state.episode < cfg.episodes_total:
        batch = collect_episodes(state, cfg, dist)
        train_step(state, batch, cfg)
        if progress_every and state.episode % progress_every == 0:
            ep, loss, kl, reg = state.diagnostics[-1]
            log.info("nhat=%s seed=%d ep=%d loss=%.4f kl=%.1f regret=%.2f",
                     cfg.nhat, cfg.seed, ep, loss, kl, reg)
    return state


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


@dataclass
class EvalResult:
    arm_means: np.ndarray  # (E, A)
    actions: np.ndarray    # (E, T)
    rewards: np.ndarray    # (E, T)
    q_values: np.ndarray   # (E, T, A), reward units
    regrets: np.ndarray    # (E,)

    @property
    def mean_regret(self) -> float:
        return float(self.regrets.mean())

    def trajectories(self, source_tag: str = "", seed=None, reward_noise_sd: float = math.sqrt(10.0)):
        from .bandit import trajectories_from_arrays
        return trajectories_from_arrays(self.arm_means, self.actions, self.rewards,
                                        reward_noise_sd, source_tag, self.q_values, seed)


def evaluate(checkpoint, dist: TaskDistribution, episodes: int, mode: str = "map",
             seed: int = 0, chunk: int = 250) -> EvalResult:
    """Greedy rollouts with frozen parameters.

    mode="map" plays every episode with the posterior mode; "posterior-sample"
    redraws the parameters at the start of each episode.
    """
    if mode not in ("map", "posterior-sample"):
        raise ValueError(f"unknown mode {mode!r}")
    cfg, q = checkpoint.config, checkpoint.posterior
    rng = make_streams(seed, ("tasks", "rewards", "params"))
    means = sample_arm_means(dist, episodes, rng["tasks"])
    shared = map_params(q) if mode == "map" else None
    out = []
    for lo in range(0, episodes, chunk):
        m = means[lo:lo + chunk]
        params = shared if shared is not None else sample_params(q, rng["params"], n=len(m)).params
        out.append(greedy_rollout(params, m, dist.reward_noise_sd, dist.horizon,
                                  rng["rewards"], cfg.reward_scale))
    if out:
        actions, rewards, qs = (np.concatenate(x) for x in zip(*out))
    else:
        T, A = dist.horizon, dist.num_arms
        actions, rewards, qs = np.zeros((0, T), np.int64), np.zeros((0, T)), np.zeros((0, T, A))
    return EvalResult(means, actions, rewards, qs * cfg.reward_scale,
                      regret_from_arrays(means, actions))
