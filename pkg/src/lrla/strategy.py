"""Probit strategy regression with Laplace uncertainty, and mean-shift clustering of fits.

Choices are regressed on (V, RU, V/TU) computed from the chooser's own
conjugate belief trajectory:

    p(a_t = 0) = Phi(w1 V_t + w2 RU_t + w3 V_t / TU_t)
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .bandit import TaskDistribution, Trajectory
from .belief import Factors, design_matrix, factors_from_arrays, inverse_mills, log_phi

log = logging.getLogger(__name__)

FALLBACK_RIDGE = 0.1


@dataclass(frozen=True)
class ChoiceObservation:
    factors: Factors
    choice: int


@dataclass(frozen=True)
class ProbitFit:
    w: np.ndarray
    covariance: np.ndarray
    log_likelihood: float
    n_obs: int
    ridge: float = 0.01
    converged: bool = True
    flagged: bool = False
    message: str = ""


@dataclass(frozen=True)
class ClusterResult:
    assignments: np.ndarray
    modes: np.ndarray
    bandwidth: float


def _episode_arrays(episode):
    if isinstance(episode, Trajectory):
        return episode.actions[None], episode.rewards[None]
    choices, rewards = episode
    return np.asarray(choices)[None], np.asarray(rewards, dtype=np.float64)[None]


def extract_observations(episode, dist: TaskDistribution = TaskDistribution()) -> list[ChoiceObservation]:
    """Factors before every choice of one episode (a Trajectory or a (choices, rewards) pair)."""
    actions, rewards = _episode_arrays(episode)
    if rewards.shape != actions.shape or not np.all(np.isfinite(rewards)):
        raise ValueError("episode needs a finite reward for every choice")
    f = factors_from_arrays(actions, rewards, dist)[0]
    return [ChoiceObservation(Factors(*map(float, row)), int(a)) for row, a in zip(f, actions[0])]


def observation_arrays(actions, rewards, dist: TaskDistribution = TaskDistribution()):
    """Vectorised extraction: (E, T) episodes -> regressors (E*T, 3) and choices (E*T,)."""
    actions = np.asarray(actions)
    X = design_matrix(factors_from_arrays(actions, rewards, dist))
    return X.reshape(-1, 3), actions.reshape(-1)


def trajectories_to_arrays(trajs: Sequence[Trajectory]):
    return (np.stack([t.actions for t in trajs]), np.stack([t.rewards for t in trajs]))


def probit_loglik(w, X, choices) -> float:
    sign = 1.0 - 2.0 * np.asarray(choices, dtype=np.float64)
    return float(np.sum(log_phi(sign * (X @ np.asarray(w, dtype=np.float64)))))


def _newton(X, sign, ridge, max_iter=100, tol=1e-8):
    w = np.zeros(X.shape[1])

    def objective(w):
        return float(np.sum(log_phi(sign * (X @ w)))) - 0.5 * ridge * float(w @ w)

    f = objective(w)
    for it in range(max_iter):
        u = sign * (X @ w)
        lam = inverse_mills(u)
        grad = X.T @ (sign * lam) - ridge * w
        hess = (X * (lam * (u + lam))[:, None]).T @ X + ridge * np.eye(X.shape[1])
        if np.max(np.abs(grad)) < tol:
            return w, hess, True
        try:
            delta = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return w, hess, False
        step = 1.0
        while step > 1e-10:
            w_new = w + step * delta
            f_new = objective(w_new)
            if f_new >= f - 1e-12 * (1.0 + abs(f)):  # allow roundoff near the optimum
                break
            step *= 0.5
        else:
            return w, hess, False
        w, f = w_new, f_new
    u = sign * (X @ w)
    lam = inverse_mills(u)
    grad = X.T @ (sign * lam) - ridge * w
    hess = (X * (lam * (u + lam))[:, None]).T @ X + ridge * np.eye(X.shape[1])
    return w, hess, bool(np.max(np.abs(grad)) < tol)


def _well_posed(X, hess) -> bool:
    # curvature vanishing relative to the data scale means separated data,
    # where the gradient also vanishes as |w| grows without bound
    if not np.all(np.isfinite(hess)):
        return False
    return bool(np.linalg.eigvalsh(hess)[0] > 1e-8 * np.linalg.eigvalsh(X.T @ X)[-1])


def fit_probit_arrays(X, choices, ridge: float = 0.01) -> ProbitFit:
    """Penalised maximum likelihood by Newton's method; covariance from the Hessian."""
    X = np.asarray(X, dtype=np.float64)
    choices = np.asarray(choices)
    n = X.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 observations, got {n}")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    if not np.all(np.isfinite(X)):
        raise ValueError("regressors must be finite")
    sign = 1.0 - 2.0 * choices.astype(np.float64)
    messages = []
    if np.linalg.matrix_rank(X) < X.shape[1]:
        messages.append("design matrix is rank deficient (constant or collinear regressor)")

    w, hess, ok = _newton(X, sign, ridge)
    ok = ok and _well_posed(X, hess)
    used = ridge
    if not ok:
        messages.append(f"no convergence at ridge={ridge}; refit with ridge={FALLBACK_RIDGE}")
        used = max(ridge, FALLBACK_RIDGE)
        w, hess, ok = _newton(X, sign, used)
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        cov = np.full((X.shape[1],) * 2, np.nan)
        messages.append("singular Hessian")
    cov = 0.5 * (cov + cov.T)
    ll = float(np.sum(log_phi(sign * (X @ w))))
    fit = ProbitFit(w, cov, ll, n, used, ok, bool(messages), "; ".join(messages))
    if fit.flagged:
        log.warning("probit fit flagged: %s", fit.message)
    return fit


def fit_probit(obs: Sequence[ChoiceObservation], ridge: float = 0.01) -> ProbitFit:
    X = np.array([o.factors.regressors() for o in obs]).reshape(-1, 3)
    choices = np.array([o.choice for o in obs])
    return fit_probit_arrays(X, choices, ridge)


def coefficient_sd(fit: ProbitFit) -> np.ndarray:
    d = np.diag(fit.covariance)
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ValueError(f"invalid covariance diagonal {d}; the fit failed")
    return np.sqrt(d)


# -- clustering ---------------------------------------------------------------

def silverman_bandwidth(points) -> float:
    """Geometric mean of the per-dimension Silverman bandwidths (1.0 if degenerate)."""
    x = np.asarray(points, dtype=np.float64)
    n, d = x.shape
    if n < 2:
        return 1.0
    sd = x.std(axis=0, ddof=1)
    h = sd * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))
    h = h[h > 0]
    return float(np.exp(np.mean(np.log(h)))) if h.size else 1.0


def mean_shift(points, bandwidth: Optional[float] = None, tol: float = 1e-6,
               max_iter: int = 1000) -> ClusterResult:
    """Gaussian-kernel mean shift; converged points closer than bandwidth/2 share a mode."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("need at least one point")
    bw = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not bw > 0:
        raise ValueError("bandwidth must be > 0")
    y = x.copy()
    active = np.ones(len(y), dtype=bool)
    for _ in range(max_iter):
        ya = y[active]
        d2 = ((ya[:, None, :] - x[None, :, :]) ** 2).sum(-1)
        k = np.exp(-(d2 - d2.min(axis=1, keepdims=True)) / (2.0 * bw * bw))
        y_new = (k @ x) / k.sum(axis=1, keepdims=True)
        moved = np.sqrt(((y_new - ya) ** 2).sum(-1))
        y[active] = y_new
        idx = np.flatnonzero(active)
        active[idx[moved < tol]] = False
        if not active.any():
            break
    labels = np.arange(len(y))
    modes = y
    while True:
        close = np.sqrt(((modes[:, None, :] - modes[None, :, :]) ** 2).sum(-1)) <= bw / 2
        n_comp, comp = connected_components(close, directed=False)
        labels = comp[labels]
        modes = np.array([y[labels == c].mean(axis=0) for c in range(n_comp)])
        if n_comp == len(close):
            break
    # relabel by first appearance
    order = {}
    labels = np.array([order.setdefault(c, len(order)) for c in labels])
    modes = np.array([y[labels == c].mean(axis=0) for c in range(len(order))])
    return ClusterResult(labels, modes, bw)


def prototype_of(cluster: ClusterResult, fits: Sequence[ProbitFit], cluster_id: int) -> ProbitFit:
    """Member fit whose coefficients lie closest to the cluster mode (lowest index on ties)."""
    members = np.flatnonzero(np.asarray(cluster.assignments) == cluster_id)
    if members.size == 0:
        raise ValueError(f"cluster {cluster_id} is empty")
    mode = np.asarray(cluster.modes[cluster_id])
    dist = [float(np.linalg.norm(np.asarray(fits[i].w) - mode)) for i in members]
    return fits[members[int(np.argmin(dist))]]


# -- coefficient CSV ----------------------------------------------------------

COEFF_COLUMNS = ("entity_id", "kind", "nhat_or_blank", "seed_or_blank", "w1", "w2", "w3",
                 "sd1", "sd2", "sd3", "loglik", "n_obs", "flagged")


@dataclass(frozen=True)
class CoefficientRow:
    entity_id: str
    kind: str  # human | lrla | baseline
    fit: ProbitFit
    nhat: Optional[int] = None
    seed: Optional[int] = None


def _blank(v) -> str:
    return "" if v is None else str(v)


def write_coefficients_csv(path, rows: Sequence[CoefficientRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COEFF_COLUMNS)
        for r in rows:
            try:
                sd = coefficient_sd(r.fit)
            except ValueError:
                sd = np.full(3, np.nan)
            w.writerow([r.entity_id, r.kind, _blank(r.nhat), _blank(r.seed),
                        *(repr(float(v)) for v in r.fit.w), *(repr(float(v)) for v in sd),
                        repr(r.fit.log_likelihood), r.fit.n_obs, int(r.fit.flagged)])


def read_coefficients_csv(path) -> list[dict]:
    """Rows as dicts with parsed numeric fields; raises on a schema mismatch."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(COEFF_COLUMNS[:-1]) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            if row["kind"] not in ("human", "lrla", "baseline"):
                raise ValueError(f"{path}: bad kind {row['kind']!r}")
            rec = dict(row)
            rec["w"] = np.array([float(row[c]) for c in ("w1", "w2", "w3")])
            rec["sd"] = np.array([float(row[c]) for c in ("sd1", "sd2", "sd3")])
            rec["loglik"] = float(row["loglik"])
            rec["n_obs"] = int(row["n_obs"])
            rec["nhat"] = int(row["nhat_or_blank"]) if row["nhat_or_blank"] else None
            rec["seed"] = int(row["seed_or_blank"]) if row["seed_or_blank"] else None
            out.append(rec)
    return out
