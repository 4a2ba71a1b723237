"""Per-participant likelihoods and Bayes factors between strategy hypotheses.

Every hypothesis is a uniform mixture of probit choice models
p(a_t = 0) = Phi(w . (V, RU, V/TU)).  Baselines carry their exact fixed
coefficients; a learned-model hypothesis carries one fitted w per trained
seed.  The learned-model class mixes its per-nhat hypotheses uniformly.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .bandit import TaskDistribution
from .belief import BASELINE_WEIGHTS, BaselineKind, design_matrix, factors_from_arrays, log_phi
from .strategy import ProbitFit, fit_probit_arrays, observation_arrays

log = logging.getLogger(__name__)

VERY_STRONG = 10.0  # threshold on 2 log BF


@dataclass(frozen=True)
class Participant:
    participant_id: int
    choices: np.ndarray  # (E, T) int
    rewards: np.ndarray  # (E, T) float

    @property
    def num_trials(self) -> int:
        return self.choices.size


@dataclass(frozen=True)
class Hypothesis:
    label: str
    kind: str                      # "lrla" or "baseline"
    members: tuple                 # tuple of 3-vectors
    nhat: Optional[int] = None
    seeds: tuple = ()

    def __post_init__(self):
        if not self.members:
            raise ValueError(f"hypothesis {self.label!r} has no members")


def baseline_hypothesis(kind: BaselineKind) -> Hypothesis:
    kind = BaselineKind(kind)
    return Hypothesis(kind.value, "baseline", (np.array(BASELINE_WEIGHTS[kind]),))


@dataclass
class BayesFactor:
    participant_id: int
    log_bf: float
    class_loglik: float
    baseline_loglik: float
    nhat_logliks: dict = field(default_factory=dict)
    best_nhat: Optional[int] = None

    @property
    def two_log_bf(self) -> float:
        return 2.0 * self.log_bf

    @property
    def very_strong(self) -> bool:
        return self.two_log_bf > VERY_STRONG


def _design(p: Participant, dist: TaskDistribution):
    X = design_matrix(factors_from_arrays(p.choices, p.rewards, dist)).reshape(-1, 3)
    sign = 1.0 - 2.0 * p.choices.reshape(-1).astype(np.float64)
    return X, sign


def participant_loglik(p: Participant, w, dist: TaskDistribution = TaskDistribution()) -> float:
    """sum_t log Phi(+-w . x_t), with x_t from the participant's own beliefs."""
    X, sign = _design(p, dist)
    ll = float(np.sum(log_phi(sign * (X @ np.asarray(w, dtype=np.float64)))))
    if not math.isfinite(ll):
        raise ValueError(f"non-finite log-likelihood for participant {p.participant_id}")
    return ll


def log_mean_exp(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    return float(logsumexp(v) - math.log(v.size))


def marginal_loglik(p: Participant, hyp: Hypothesis, dist: TaskDistribution = TaskDistribution()) -> float:
    X, sign = _design(p, dist)
    lls = [float(np.sum(log_phi(sign * (X @ np.asarray(w, dtype=np.float64))))) for w in hyp.members]
    return log_mean_exp(lls)


def bayes_factor(p: Participant, class_hyps: Sequence[Hypothesis], baseline: Hypothesis,
                 dist: TaskDistribution = TaskDistribution()) -> BayesFactor:
    """log BF of the uniform mixture over class_hyps against the baseline."""
    if not class_hyps:
        raise ValueError("the hypothesis class is empty")
    per = {h.label: marginal_loglik(p, h, dist) for h in class_hyps}
    cls = log_mean_exp(list(per.values()))
    base = marginal_loglik(p, baseline, dist)
    best = max(class_hyps, key=lambda h: per[h.label])
    return BayesFactor(p.participant_id, cls - base, cls, base, per, best.nhat)


def class_loglik(p: Participant, class_hyps: Sequence[Hypothesis], dist=TaskDistribution()) -> float:
    return log_mean_exp([marginal_loglik(p, h, dist) for h in class_hyps])


def population_bf(participants: Sequence[Participant], class_hyps: Sequence[Hypothesis],
                  fixed: Hypothesis, dist: TaskDistribution = TaskDistribution()) -> float:
    """2 log BF of prod_i p(D_i | class) against prod_i p(D_i | fixed)."""
    total = 0.0
    for p in participants:
        total += class_loglik(p, class_hyps, dist) - marginal_loglik(p, fixed, dist)
    return 2.0 * total


# -- learned-model hypotheses -------------------------------------------------

def hypothesis_from_model(checkpoint, dist: TaskDistribution = TaskDistribution(),
                          sim_episodes: int = 1000, seed: int = 0, ridge: float = 0.01) -> ProbitFit:
    """Probit surrogate of a trained model: fit to its own posterior-sample rollouts."""
    from .trainer import evaluate
    res = evaluate(checkpoint, dist, sim_episodes, mode="posterior-sample", seed=seed)
    X, choices = observation_arrays(res.actions, res.rewards, dist)
    fit = fit_probit_arrays(X, choices, ridge)
    if np.all(choices == choices[0]):
        msg = "degenerate simulation: a single arm was always chosen"
        log.warning(msg)
        fit = replace(fit, flagged=True, message="; ".join(filter(None, [fit.message, msg])))
    return fit


def lrla_hypotheses(fits_by_nhat: dict) -> list[Hypothesis]:
    """One hypothesis per nhat from {nhat: [(seed, ProbitFit), ...]}."""
    out = []
    for nhat in sorted(fits_by_nhat):
        entries = sorted(fits_by_nhat[nhat], key=lambda e: e[0])
        out.append(Hypothesis(f"nhat={nhat}", "lrla", tuple(np.asarray(f.w) for _, f in entries),
                              nhat, tuple(s for s, _ in entries)))
    return out


# -- human data ---------------------------------------------------------------

HUMAN_COLUMNS = ("participant_id", "episode", "trial", "choice", "reward")


def load_human_data(path, horizon: int = 10) -> tuple[list[Participant], list[str]]:
    """Parse the choice CSV; returns participants and per-row/episode diagnostics.

    Bad rows are skipped, and so is any episode left without exactly
    `horizon` consecutive trials.
    """
    problems: list[str] = []
    episodes: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return [], problems
        missing = set(HUMAN_COLUMNS) - set(reader.fieldnames)
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                pid, ep, trial = int(row["participant_id"]), int(row["episode"]), int(row["trial"])
                choice = int(row["choice"])
            except (TypeError, ValueError):
                problems.append(f"line {lineno}: malformed integer field")
                continue
            if choice not in (0, 1):
                problems.append(f"line {lineno}: choice {choice} out of range")
                continue
            try:
                reward = float(row["reward"])
            except (TypeError, ValueError):
                problems.append(f"line {lineno}: missing or malformed reward")
                continue
            if not math.isfinite(reward):
                problems.append(f"line {lineno}: non-finite reward")
                continue
            episodes.setdefault((pid, ep), {})
            if trial in episodes[(pid, ep)]:
                problems.append(f"line {lineno}: duplicate trial {trial}")
                continue
            episodes[(pid, ep)][trial] = (choice, reward)

    by_pid: dict = {}
    for (pid, ep), trials in sorted(episodes.items()):
        if sorted(trials) != list(range(horizon)):
            problems.append(f"participant {pid} episode {ep}: {len(trials)} valid trials, "
                            f"expected trials 0..{horizon - 1}; episode dropped")
            continue
        by_pid.setdefault(pid, []).append([trials[t] for t in range(horizon)])
    out = []
    for pid, eps in sorted(by_pid.items()):
        arr = np.array(eps, dtype=np.float64)  # (E, T, 2)
        out.append(Participant(pid, arr[..., 0].astype(np.int64), arr[..., 1]))
    return out, problems


def write_human_csv(path, participants: Sequence[Participant]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HUMAN_COLUMNS)
        for p in participants:
            for e in range(p.choices.shape[0]):
                for t in range(p.choices.shape[1]):
                    w.writerow([p.participant_id, e, t, int(p.choices[e, t]), repr(float(p.rewards[e, t]))])


def synthetic_participants(w_list, dist: TaskDistribution, episodes: int, rng: np.random.Generator,
                           first_id: int = 0) -> list[Participant]:
    """Participants whose choices follow probit policies with the given coefficients."""
    from .belief import simulate_probit_policy
    out = []
    for i, w in enumerate(w_list):
        _, a, r = simulate_probit_policy(w, dist, episodes, rng)
        out.append(Participant(first_id + i, a, r))
    return out


# -- result CSVs --------------------------------------------------------------

LOGLIK_COLUMNS = ("participant_id", "hypothesis", "loglik")
BF_COLUMNS = ("participant_id", "log_bf", "two_log_bf", "best_nhat", "very_strong")


def write_loglik_csv(path, rows) -> None:
    """rows: iterable of (participant_id, hypothesis_label, loglik)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOGLIK_COLUMNS)
        for pid, label, ll in rows:
            w.writerow([pid, label, repr(float(ll))])


def write_bf_csv(path, results: Sequence[BayesFactor]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BF_COLUMNS)
        for r in results:
            w.writerow([r.participant_id, repr(r.log_bf), repr(r.two_log_bf),
                        "" if r.best_nhat is None else r.best_nhat, int(r.very_strong)])
