"""Observer-side evaluation of deceptive behavior.

Statistical distance between the team's behavior and each predicted
behavior reduces to an occupancy-weighted sum of log policy ratios, so no
path distribution is ever materialized. On top of that identity live the
two deceptiveness scores, path log-likelihoods, the likelihood-ratio
decision rule, and a Monte-Carlo divergence estimator used as an
independent cross-check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .mdp import (Mdp, OccupancyMeasure, PathSample, Policy,
                  _batch_rollout, default_horizon_cap)

# Occupancy/policy consistency is enforced on states carrying at least this
# much residence mass.
CONSISTENCY_MASS = 1e-6
CONSISTENCY_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class DeceptivenessReport:
    """Per-candidate divergences and the mode-specific score.

    ``kl`` holds the divergence of the evaluated behavior from each
    predicted behavior (smoothed by the epsilon the caller passed).
    ``most_likely`` is the candidate an observer running likelihood-ratio
    comparisons would favor (smallest index on ties).
    """

    kl: tuple[float, ...]
    relative_log_likelihood: tuple[float, ...] | None
    exaggeration_score: float | None
    ambiguity_score: float | None
    most_likely: int


def _check_consistency(x: OccupancyMeasure, pi: Policy):
    if len(x.values) != len(pi.rows):
        raise ValidationError("occupancy and policy cover different state spaces")
    for row, prow in zip(x.values, pi.rows):
        mass = float(row.sum())
        if mass > CONSISTENCY_MASS:
            if np.max(np.abs(row / mass - prow)) > CONSISTENCY_TOL:
                raise ValidationError("occupancy is not consistent with the policy")


def kl_path_divergence(x: OccupancyMeasure, pi: Policy, pi_bar: Policy,
                       epsilon: float = 0.0) -> float:
    """Divergence of the behavior (x, pi) from pi_bar over path space.

    Equals sum over (s, a) of x(s,a) * log(pi(s,a) / (pi_bar(s,a) + eps));
    with eps = 0 a support mismatch yields +inf.
    """
    if epsilon < 0:
        raise ValidationError("epsilon must be nonnegative")
    _check_consistency(x, pi)
    total = 0.0
    for row, prow, brow in zip(x.values, pi.rows, pi_bar.rows):
        mask = row > 0
        if not mask.any():
            continue
        denom = brow[mask] + epsilon
        if np.any(denom == 0.0):
            return math.inf
        total += float((row[mask] * (np.log(prow[mask]) - np.log(denom))).sum())
    return total


def _relative_term(x: OccupancyMeasure, pi_i: Policy, pi_true: Policy,
                   epsilon: float) -> float:
    """Expected log-likelihood advantage of candidate i over the true one."""
    total = 0.0
    for row, irow, trow in zip(x.values, pi_i.rows, pi_true.rows):
        mask = row > 0
        if not mask.any():
            continue
        num = irow[mask] + epsilon
        den = trow[mask] + epsilon
        if np.any(num == 0.0):
            return -math.inf
        if np.any(den == 0.0):
            return math.inf
        total += float((row[mask] * (np.log(num) - np.log(den))).sum())
    return total


def deceptiveness_exaggeration(x: OccupancyMeasure, pi: Policy,
                               predicted: Sequence[Policy], true_idx: int,
                               epsilon: float) -> DeceptivenessReport:
    """Exaggeration score: best log-likelihood advantage any candidate gains.

    The ``true_idx`` term is identically zero, so the score is never
    negative; the report also carries the divergence to every candidate.
    """
    if not (0 <= true_idx < len(predicted)):
        raise ValidationError("true_idx out of range")
    terms = tuple(_relative_term(x, pi_i, predicted[true_idx], epsilon)
                  for pi_i in predicted)
    kl = tuple(kl_path_divergence(x, pi, pi_i, epsilon) for pi_i in predicted)
    score = max(terms)
    most_likely = int(np.argmax(terms))
    return DeceptivenessReport(kl=kl, relative_log_likelihood=terms,
                               exaggeration_score=float(score),
                               ambiguity_score=None, most_likely=most_likely)


def deceptiveness_ambiguity(x: OccupancyMeasure, pi: Policy,
                            predicted: Sequence[Policy],
                            epsilon: float) -> DeceptivenessReport:
    """Ambiguity score: negated worst-case divergence to the candidate set."""
    kl = tuple(kl_path_divergence(x, pi, pi_i, epsilon) for pi_i in predicted)
    score = -max(kl)
    return DeceptivenessReport(kl=kl, relative_log_likelihood=None,
                               exaggeration_score=None,
                               ambiguity_score=float(score),
                               most_likely=int(np.argmin(kl)))


def path_log_likelihood(path: PathSample, policy: Policy, mdp: Mdp) -> float:
    """Log-probability of a path: initial mass, action choices, transitions.

    Returns -inf as an explicit marker when any factor is zero.
    """
    states = [s for s, _ in path.steps] + [path.terminal]
    p0 = float(mdp.initial[states[0]])
    if p0 == 0.0:
        return -math.inf
    total = math.log(p0)
    for (s, a), s_next in zip(path.steps, states[1:]):
        pa = policy.prob(s, a)
        pt = mdp.transition_prob(s, a, s_next)
        if pa == 0.0 or pt == 0.0:
            return -math.inf
        total += math.log(pa) + math.log(pt)
    return total


def likelihood_ratio_decision(paths: Sequence[PathSample], pi_i: Policy,
                              pi_j: Policy, mdp: Mdp, threshold: float) -> int:
    """Observer's decision between two hypothesized policies.

    Returns 0 when the pooled log-likelihood ratio of ``pi_i`` over ``pi_j``
    meets ``threshold`` (the boundary decides for ``pi_i``), else 1.
    Initial and transition factors are common to both hypotheses and cancel
    analytically, so only action probabilities enter.
    """
    if threshold < 0:
        raise ValidationError("threshold must be nonnegative")
    ratio = 0.0
    impossible_i = impossible_j = False
    for path in paths:
        for s, a in path.steps:
            p_i, p_j = pi_i.prob(s, a), pi_j.prob(s, a)
            if p_i == 0.0:
                impossible_i = True
            if p_j == 0.0:
                impossible_j = True
            if p_i > 0.0 and p_j > 0.0:
                ratio += math.log(p_i) - math.log(p_j)
    if impossible_i and impossible_j:
        raise ValidationError("paths are impossible under both hypotheses")
    if impossible_i:
        return 1
    if impossible_j:
        return 0
    return 0 if ratio >= threshold else 1


@dataclass(frozen=True, eq=False)
class KlEstimate:
    estimate: float
    stderr: float
    n_effective: int
    n_truncated: int
    truncation_warning: bool


def estimate_kl_monte_carlo(mdp: Mdp, pi: Policy, pi_bar: Policy, n: int,
                            seed: int, horizon_cap: int | None = None) -> KlEstimate:
    """Sample-based divergence estimate used to cross-check the identity.

    Averages the per-path log-ratio of action probabilities over ``n``
    rollouts of ``pi``; transition factors cancel. Truncated paths are
    excluded from the average and counted; more than 10% truncation raises
    the warning flag.
    """
    if n < 100:
        raise ValidationError("need at least 100 paths for a stable estimate")
    if horizon_cap is None:
        horizon_cap = default_horizon_cap(mdp)
    absorbing = np.array([mdp.is_absorbing(s) for s in range(mdp.n_states)])
    ratios = np.zeros(n)
    truncated = np.zeros(n, dtype=bool)
    step = 0
    for ids, states, acts, nxt in _batch_rollout(mdp, pi, n, seed, horizon_cap):
        p_num = np.array([pi.rows[s][a] for s, a in zip(states, acts)])
        p_den = np.array([pi_bar.rows[s][a] for s, a in zip(states, acts)])
        with np.errstate(divide="ignore"):
            ratios[ids] += np.log(p_num) - np.log(p_den)
        if step == horizon_cap - 1:
            # Only paths still unabsorbed after the last allowed step count
            # as truncated; everything that dropped out earlier is complete.
            truncated[ids] = ~absorbing[nxt]
        step += 1
    kept = ratios[~truncated]
    n_eff = int((~truncated).sum())
    n_trunc = n - n_eff
    if n_eff == 0:
        raise ValidationError("every sampled path was truncated")
    estimate = float(kept.mean())
    if not math.isfinite(estimate):
        stderr = math.inf
    else:
        stderr = float(kept.std(ddof=1) / math.sqrt(n_eff)) if n_eff > 1 else math.inf
    return KlEstimate(estimate=estimate, stderr=stderr, n_effective=n_eff,
                      n_truncated=n_trunc,
                      truncation_warning=n_trunc > 0.1 * n)
