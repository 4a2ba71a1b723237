"""GRU + linear head Q-network with exact reverse-mode gradients over an episode.

Cell (Cho et al. formulation):

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    g  = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * g
    q  = W_q h' + b_q

Parameters are plain dicts of float64 arrays keyed by PARAM_NAMES.  Weight
arrays may carry a leading batch axis (one parameter set per environment)
for forward-only rollouts; backward passes use a single shared set.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

PARAM_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h", "W_q", "b_q")

NetParams = dict  # name -> np.ndarray


@dataclass(frozen=True)
class NetShape:
    input_dim: int = 3
    hidden_dim: int = 64
    output_dim: int = 2

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.output_dim) < 1:
            raise ValueError(f"all dims must be >= 1: {self}")

    @classmethod
    def for_arms(cls, num_arms: int = 2, hidden_dim: int = 64) -> "NetShape":
        return cls(num_arms + 1, hidden_dim, num_arms)

    def param_shapes(self) -> dict:
        D, H, A = self.input_dim, self.hidden_dim, self.output_dim
        shapes = {}
        for gate in "zrh":
            shapes[f"W_{gate}"] = (H, D)
            shapes[f"U_{gate}"] = (H, H)
            shapes[f"b_{gate}"] = (H,)
        shapes["W_q"] = (A, H)
        shapes["b_q"] = (A,)
        return shapes

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())


def zero_params(shape: NetShape) -> NetParams:
    return {k: np.zeros(s) for k, s in shape.param_shapes().items()}


def random_params(shape: NetShape, rng: np.random.Generator, scale: float = 0.5) -> NetParams:
    return {k: scale * rng.standard_normal(s) for k, s in shape.param_shapes().items()}


def check_params(params: NetParams, shape: NetShape) -> None:
    for k, s in shape.param_shapes().items():
        if k not in params:
            raise ValueError(f"missing parameter {k}")
        if params[k].shape[-len(s):] != s:
            raise ValueError(f"{k}: expected trailing shape {s}, got {params[k].shape}")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def encode_input(prev_action: Optional[int], prev_reward: Optional[float],
                 reward_scale: float = 10.0, num_arms: int = 2) -> np.ndarray:
    """One-hot previous action followed by the scaled previous reward."""
    if reward_scale <= 0:
        raise ValueError("reward_scale must be > 0")
    x = np.zeros(num_arms + 1)
    if prev_action is not None:
        x[prev_action] = 1.0
        x[num_arms] = prev_reward / reward_scale
    return x


def encode_episode(actions, rewards, reward_scale: float = 10.0, num_arms: int = 2) -> np.ndarray:
    """Network inputs for whole episodes: (E, T) actions/rewards -> (T, E, num_arms + 1).

    Step t sees the action and reward of step t - 1; step 0 sees zeros.
    """
    actions = np.asarray(actions)
    rewards = np.asarray(rewards, dtype=np.float64)
    E, T = actions.shape
    x = np.zeros((T, E, num_arms + 1))
    if T > 1:
        prev = actions[:, :-1].T
        x[1:, :, :num_arms] = np.eye(num_arms)[prev]
        x[1:, :, num_arms] = rewards[:, :-1].T / reward_scale
    return x


def _mv(W, x):
    """Apply W (out, in) or per-row W (B, out, in) to x (B, in)."""
    if W.ndim == 2:
        return x @ W.T
    return np.einsum("boi,bi->bo", W, x)


def gru_step(params: NetParams, h, x):
    """One cell update; h (H,) or (B, H), x (D,) or (B, D)."""
    h = np.asarray(h, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    single = h.ndim == 1
    if single:
        h, x = h[None], x[None]
    H, D = params["W_z"].shape[-2:]
    if h.shape[-1] != H or x.shape[-1] != D:
        raise ValueError(f"shape mismatch: h {h.shape}, x {x.shape}, expected H={H}, D={D}")
    h_new = _cell(params, h, x)[0]
    return h_new[0] if single else h_new


def _cell(p, h, x):
    z = sigmoid(_mv(p["W_z"], x) + _mv(p["U_z"], h) + p["b_z"])
    r = sigmoid(_mv(p["W_r"], x) + _mv(p["U_r"], h) + p["b_r"])
    rh = r * h
    g = np.tanh(_mv(p["W_h"], x) + _mv(p["U_h"], rh) + p["b_h"])
    h_new = h + z * (g - h)
    return h_new, z, r, rh, g


def q_values(params: NetParams, h):
    h = np.asarray(h, dtype=np.float64)
    if h.ndim == 1:
        return params["W_q"] @ h + params["b_q"]
    return _mv(params["W_q"], h) + params["b_q"]


def greedy_action(q) -> int:
    """argmax with ties going to the lowest index."""
    return int(np.argmax(q))


@dataclass
class Tape:
    params: NetParams
    inputs: np.ndarray      # (T, B, D)
    hs: np.ndarray          # (T + 1, B, H), hs[0] is the initial state
    zs: np.ndarray
    rs: np.ndarray
    rhs: np.ndarray
    gs: np.ndarray
    single: bool


def forward_episode(params: NetParams, inputs):
    """Unroll over inputs (T, D) or (T, B, D) from a zero hidden state.

    Returns Q-values (T, A) or (T, B, A) and the tape for backward_episode.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim not in (2, 3) or x.shape[0] == 0:
        raise ValueError(f"inputs must be a non-empty (T, D) or (T, B, D) array, got {x.shape}")
    single = x.ndim == 2
    if single:
        x = x[:, None, :]
    T, B, _ = x.shape
    H = params["U_z"].shape[-1]
    hs = np.zeros((T + 1, B, H))
    zs, rs, rhs, gs = (np.empty((T, B, H)) for _ in range(4))
    for t in range(T):
        hs[t + 1], zs[t], rs[t], rhs[t], gs[t] = _cell(params, hs[t], x[t])
    q = np.stack([_mv(params["W_q"], hs[t + 1]) + params["b_q"] for t in range(T)])
    tape = Tape(params, x, hs, zs, rs, rhs, gs, single)
    return (q[:, 0] if single else q), tape


def backward_episode(tape: Tape, loss_grads) -> NetParams:
    """Gradient of sum_t <loss_grads[t], Q[t]> w.r.t. every parameter (shared params only)."""
    p = tape.params
    if p["W_z"].ndim != 2:
        raise ValueError("backward pass needs a single shared parameter set")
    dq = np.asarray(loss_grads, dtype=np.float64)
    if tape.single:
        dq = dq[:, None, :] if dq.ndim == 2 else dq
    T, B = tape.inputs.shape[:2]
    if dq.shape[:2] != (T, B):
        raise ValueError(f"loss_grads shape {dq.shape} does not match tape ({T}, {B})")
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    H = p["U_z"].shape[0]

    hs_out = tape.hs[1:].reshape(T * B, H)
    dq_flat = dq.reshape(T * B, -1)
    grads["W_q"] = dq_flat.T @ hs_out
    grads["b_q"] = dq_flat.sum(axis=0)
    dh_from_q = (dq_flat @ p["W_q"]).reshape(T, B, H)

    dh = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dh + dh_from_q[t]
        x, h = tape.inputs[t], tape.hs[t]
        z, r, rh, g = tape.zs[t], tape.rs[t], tape.rhs[t], tape.gs[t]

        da_h = dh * z * (1.0 - g * g)
        da_z = dh * (g - h) * z * (1.0 - z)
        drh = da_h @ p["U_h"]
        da_r = drh * h * r * (1.0 - r)

        grads["W_h"] += da_h.T @ x
        grads["U_h"] += da_h.T @ rh
        grads["b_h"] += da_h.sum(axis=0)
        grads["W_z"] += da_z.T @ x
        grads["U_z"] += da_z.T @ h
        grads["b_z"] += da_z.sum(axis=0)
        grads["W_r"] += da_r.T @ x
        grads["U_r"] += da_r.T @ h
        grads["b_r"] += da_r.sum(axis=0)

        dh = dh * (1.0 - z) + drh * r + da_z @ p["U_z"] + da_r @ p["U_r"]
    return grads


def greedy_rollout(params: NetParams, arm_means, reward_noise_sd: float, horizon: int,
                   rng: np.random.Generator, reward_scale: float = 10.0):
    """Greedy episodes for a batch of tasks arm_means (E, A).

    Params may be shared or carry a leading per-episode axis (E, ...).  Each
    episode keeps its parameters for all steps.  Returns actions (E, T),
    raw rewards (E, T) and Q-values (E, T, A) in scaled units.
    """
    arm_means = np.asarray(arm_means, dtype=np.float64)
    E, A = arm_means.shape
    H = params["U_z"].shape[-1]
    h = np.zeros((E, H))
    x = np.zeros((E, A + 1))
    rows = np.arange(E)
    actions = np.empty((E, horizon), dtype=np.int64)
    rewards = np.empty((E, horizon))
    qs = np.empty((E, horizon, A))
    for t in range(horizon):
        h = _cell(params, h, x)[0]
        q = _mv(params["W_q"], h) + params["b_q"]
        a = np.argmax(q, axis=1)
        r = arm_means[rows, a] + reward_noise_sd * rng.standard_normal(E)
        actions[:, t], rewards[:, t], qs[:, t] = a, r, q
        x = np.zeros((E, A + 1))
        x[rows, a] = 1.0
        x[:, A] = r / reward_scale
    return actions, rewards, qs
