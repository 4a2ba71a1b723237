"""Group horseshoe prior and a fully factorised variational posterior over NetParams.

Every weight is written as theta = theta_tilde * z[g] * s, where g is the
weight's group.  Under the prior theta_tilde ~ N(0, 1), z[g] ~ C+(0, 1) and
s ~ C+(0, tau0).  The posterior is Gaussian in theta_tilde and log-normal
in z and s, with independent factors.

A group is one output unit of one block: row i of [W_gate | U_gate | b_gate]
for each GRU gate, and row a of [W_q | b_q] for the head.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .net import PARAM_NAMES, NetParams, NetShape

LOG_2PI = math.log(2.0 * math.pi)
PHI_NAMES = ("theta_loc", "theta_logscale", "group_loc", "group_logscale",
             "global_loc", "global_logscale")


@dataclass(frozen=True)
class HorseshoePrior:
    tau0: float = 1e-5

    def __post_init__(self):
        if not self.tau0 > 0:
            raise ValueError(f"tau0 must be > 0, got {self.tau0}")

    def sample_scales(self, rng: np.random.Generator, size) -> tuple[np.ndarray, np.ndarray]:
        """Draw (s, z) from the prior using the inverse-gamma mixture form of C+.

        x ~ C+(0, g) iff x**2 | a ~ IG(1/2, 1/a) and a ~ IG(1/2, 1/g**2).
        """
        def half_cauchy(scale):
            a = (1.0 / scale ** 2) / rng.gamma(0.5, 1.0, size)
            return np.sqrt((1.0 / a) / rng.gamma(0.5, 1.0, size))
        s = half_cauchy(self.tau0)
        z = half_cauchy(1.0)
        return s, z


def half_cauchy_logpdf(x, scale):
    x = np.asarray(x, dtype=np.float64)
    return math.log(2.0) - math.log(math.pi) - math.log(scale) - np.log1p((x / scale) ** 2)


def _neg_log_half_cauchy_of_log(u, log_scale):
    """-log C+(exp(u); scale) and its derivative in u, overflow-free."""
    d = 2.0 * (u - log_scale)
    val = -math.log(2.0) + math.log(math.pi) + log_scale + np.logaddexp(0.0, d)
    grad = 2.0 * (0.5 * (1.0 + np.tanh(0.5 * d)))
    return val, grad


def lognormal_vs_halfcauchy_terms(loc, logscale, gamma, eps):
    """Single-draw values of log q(x) - log p(x) for x = exp(loc + exp(logscale) * eps).

    Returns (values, d/dloc, d/dlogscale), all broadcast to eps.
    """
    sigma = np.exp(logscale)
    u = loc + sigma * eps
    log_q = -u - logscale - 0.5 * LOG_2PI - 0.5 * eps * eps
    nlp, dnlp = _neg_log_half_cauchy_of_log(u, math.log(gamma))
    return log_q + nlp, -1.0 + dnlp, -1.0 + (dnlp - 1.0) * sigma * eps


@dataclass
class VariationalPosterior:
    shape: NetShape
    phi: dict  # name in PHI_NAMES -> float64 array

    @cached_property
    def layout(self) -> list:
        """(name, shape, offset) for each NetParams entry in the flat vector."""
        out, off = [], 0
        for name, shp in self.shape.param_shapes().items():
            out.append((name, shp, off))
            off += int(np.prod(shp))
        return out

    @cached_property
    def group_index(self) -> np.ndarray:
        return group_index(self.shape)

    @property
    def num_groups(self) -> int:
        return 3 * self.shape.hidden_dim + self.shape.output_dim

    def unflatten(self, flat: np.ndarray) -> NetParams:
        """Flat (..., N) weights to NetParams with the same leading axes."""
        lead = flat.shape[:-1]
        return {name: flat[..., off:off + int(np.prod(shp))].reshape(lead + shp)
                for name, shp, off in self.layout}

    def flatten(self, params: NetParams) -> np.ndarray:
        return np.concatenate([np.asarray(params[name]).reshape(-1) for name in PARAM_NAMES])

    def copy(self) -> "VariationalPosterior":
        return VariationalPosterior(self.shape, {k: v.copy() for k, v in self.phi.items()})


def group_index(shape: NetShape) -> np.ndarray:
    """Group id for every flat weight (see module docstring for the grouping)."""
    H, A = shape.hidden_dim, shape.output_dim
    ids = []
    for k, gate in enumerate("zrh"):
        rows = k * H + np.arange(H)
        ids += [np.repeat(rows, shape.input_dim), np.repeat(rows, H), rows]
        # order within the flat vector is W_gate, U_gate, b_gate
    ids += [np.repeat(3 * H + np.arange(A), H), 3 * H + np.arange(A)]
    out = np.concatenate(ids)
    assert out.size == shape.num_params
    return out


@dataclass
class PosteriorSample:
    params: NetParams
    theta: np.ndarray        # flat composed weights
    theta_tilde: np.ndarray
    group_scale: np.ndarray  # z per group
    global_scale: np.ndarray  # s, shape (1,) or (n, 1)
    eps_theta: np.ndarray
    eps_group: np.ndarray
    eps_global: np.ndarray


def init_posterior(shape: NetShape, prior: HorseshoePrior, rng: np.random.Generator,
                   init_sd: float = 0.1, global_scale: float | None = None) -> VariationalPosterior:
    """Small random means, log-scales at log(init_sd), global scale centred at
    global_scale (tau0 by default) and group scales at 1."""
    n, G = shape.num_params, 3 * shape.hidden_dim + shape.output_dim
    phi = {
        "theta_loc": init_sd * rng.standard_normal(n),
        "theta_logscale": np.full(n, math.log(init_sd)),
        "group_loc": np.zeros(G),
        "group_logscale": np.full(G, math.log(init_sd)),
        "global_loc": np.array([math.log(prior.tau0 if global_scale is None else global_scale)]),
        "global_logscale": np.array([math.log(init_sd)]),
    }
    return VariationalPosterior(shape, phi)


def _compose(q: VariationalPosterior, theta_tilde, log_z, log_s):
    z = np.exp(log_z)
    s = np.exp(log_s)
    theta = theta_tilde * z[..., q.group_index] * s
    return theta, z, s


def sample_params(q: VariationalPosterior, rng: np.random.Generator, n: int | None = None) -> PosteriorSample:
    """Reparametrised draw(s); with n, every array gains a leading axis of length n."""
    p = q.phi
    lead = () if n is None else (n,)
    eps_t = rng.standard_normal(lead + p["theta_loc"].shape)
    eps_g = rng.standard_normal(lead + p["group_loc"].shape)
    eps_s = rng.standard_normal(lead + (1,))
    theta_tilde = p["theta_loc"] + np.exp(p["theta_logscale"]) * eps_t
    log_z = p["group_loc"] + np.exp(p["group_logscale"]) * eps_g
    log_s = p["global_loc"] + np.exp(p["global_logscale"]) * eps_s
    theta, z, s = _compose(q, theta_tilde, log_z, log_s)
    return PosteriorSample(q.unflatten(theta), theta, theta_tilde, z, s, eps_t, eps_g, eps_s)


def map_params(q: VariationalPosterior) -> NetParams:
    """Mode of every factor, composed multiplicatively."""
    p = q.phi
    log_z = p["group_loc"] - np.exp(2.0 * p["group_logscale"])
    log_s = p["global_loc"] - np.exp(2.0 * p["global_logscale"])
    theta, _, _ = _compose(q, p["theta_loc"].copy(), log_z, log_s)
    return q.unflatten(theta)


def gaussian_kl(q: VariationalPosterior) -> tuple[float, dict]:
    """Closed-form KL(N(m, sd^2) || N(0, 1)) summed over weights, with gradients."""
    m, ls = q.phi["theta_loc"], q.phi["theta_logscale"]
    var = np.exp(2.0 * ls)
    kl = float(np.sum(0.5 * (m * m + var - 1.0) - ls))
    return kl, {"theta_loc": m.copy(), "theta_logscale": var - 1.0}


def scale_kl_samples(q: VariationalPosterior, prior: HorseshoePrior, rng: np.random.Generator,
                     n_mc: int) -> tuple[np.ndarray, dict]:
    """Per-draw Monte Carlo terms of KL for the log-normal scale factors.

    Returns the (n_mc,) draws of sum(log q - log p) and the gradient of their mean.
    """
    p = q.phi
    eps_g = rng.standard_normal((n_mc,) + p["group_loc"].shape)
    eps_s = rng.standard_normal((n_mc, 1))
    vg, dlg, dsg = lognormal_vs_halfcauchy_terms(p["group_loc"], p["group_logscale"], 1.0, eps_g)
    vs, dls, dss = lognormal_vs_halfcauchy_terms(p["global_loc"], p["global_logscale"], prior.tau0, eps_s)
    draws = vg.sum(axis=1) + vs.sum(axis=1)
    grads = {"group_loc": dlg.mean(axis=0), "group_logscale": dsg.mean(axis=0),
             "global_loc": dls.mean(axis=0), "global_logscale": dss.mean(axis=0)}
    return draws, grads


def kl_and_grad(q: VariationalPosterior, prior: HorseshoePrior, rng: np.random.Generator,
                n_mc: int = 1) -> tuple[float, dict]:
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    kl_g, grad_g = gaussian_kl(q)
    draws, grad_s = scale_kl_samples(q, prior, rng, n_mc)
    return kl_g + float(draws.mean()), {**grad_g, **grad_s}


def kl_divergence(q: VariationalPosterior, prior: HorseshoePrior, rng: np.random.Generator,
                  n_mc: int = 1) -> float:
    """KL(q || p) in nats: exact Gaussian part plus an n_mc-draw estimate for the scales."""
    return kl_and_grad(q, prior, rng, n_mc)[0]


def grad_elbo_terms(q: VariationalPosterior, sample: PosteriorSample, lik_grad: NetParams,
                    kl_grad: dict | None = None, kl_weight: float = 0.0) -> dict:
    """Gradients w.r.t. phi of L(theta(phi, eps)) + kl_weight * KL.

    lik_grad is dL/dtheta at the sample (NetParams layout); kl_grad is the KL
    gradient w.r.t. phi as returned by kl_and_grad.
    """
    if sample.theta.ndim != 1:
        raise ValueError("grad_elbo_terms needs a single (unbatched) sample")
    for name, shp, _ in q.layout:
        if name not in lik_grad or np.shape(lik_grad[name]) != shp:
            raise ValueError(f"likelihood gradient for {name} missing or mis-shaped")
    g = q.flatten(lik_grad)
    p = q.phi
    zs = sample.group_scale[q.group_index] * sample.global_scale
    d_tilde = g * zs
    gtheta = g * sample.theta
    d_logz = np.bincount(q.group_index, weights=gtheta, minlength=q.num_groups)
    d_logs = np.array([gtheta.sum()])
    grads = {
        "theta_loc": d_tilde,
        "theta_logscale": d_tilde * np.exp(p["theta_logscale"]) * sample.eps_theta,
        "group_loc": d_logz,
        "group_logscale": d_logz * np.exp(p["group_logscale"]) * sample.eps_group,
        "global_loc": d_logs,
        "global_logscale": d_logs * np.exp(p["global_logscale"]) * sample.eps_global,
    }
    if kl_grad is not None and kl_weight != 0.0:
        for k, v in kl_grad.items():
            grads[k] = grads[k] + kl_weight * v
    return grads
