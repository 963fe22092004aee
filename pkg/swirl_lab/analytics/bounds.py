"""Exact information-theoretic and likelihood quantities, by enumeration.

Conventions
-----------
- P(x) is the dataset's empirical source distribution.
- A *prior* over actions is either per-state, shape (S, A), or per-transition,
  shape (S, S, A). A ReferencePolicy yields the per-transition form (its
  snapshot IDM row at (x, y)). NaN rows mark undefined states.
- The exact CMI uses Bayes on the model joint; the IDM only enters the bound.
"""

from __future__ import annotations

import logging
from typing import Dict, Optional, Union

import numpy as np
from scipy.special import entr, logsumexp

from ..errors import EvidenceError
from ..models.policy import LOGIT_FLOOR, ConditionalCategorical, ReferencePolicy, Role
from ..worlds.dataset import TransitionDataset

logger = logging.getLogger(__name__)

Prior = Union[np.ndarray, ReferencePolicy]


def _log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


def transition_prior(prior: Prior, num_states: int, num_actions: int) -> np.ndarray:
    """Any accepted prior form as a (S, S, A) table."""
    if isinstance(prior, ReferencePolicy):
        return prior.prior_table()
    p = np.asarray(prior, dtype=np.float64)
    if p.shape == (num_states, num_actions):
        return np.broadcast_to(p[:, None, :], (num_states, num_states, num_actions))
    if p.shape == (num_states, num_states, num_actions):
        return p
    raise ValueError(
        f"prior must have shape {(num_states, num_actions)} or {(num_states, num_states, num_actions)}, got {p.shape}"
    )


def _pair_prior_rows(fwm: ConditionalCategorical, prior: Prior, dataset: TransitionDataset) -> np.ndarray:
    table = transition_prior(prior, fwm.num_states, fwm.num_actions)
    rows = table[dataset.sources, dataset.targets]
    missing = np.isnan(rows).any(axis=1)
    if missing.any():
        states = sorted(set(dataset.sources[missing].tolist()))
        raise ValueError(f"prior undefined for dataset source states {states}")
    return rows


# ---------------------------------------------------------------------
# Belief and CMI
# ---------------------------------------------------------------------
def empirical_belief(idm: ConditionalCategorical, dataset: TransitionDataset) -> np.ndarray:
    """P~(z|x): mean of Q_phi(z|x,y) over pairs with source x; NaN rows for unseen x."""
    S, A = idm.num_states, idm.num_actions
    q = idm.probabilities()[dataset.sources, dataset.targets]
    sums = np.zeros((S, A))
    np.add.at(sums, dataset.sources, q)
    counts = np.bincount(dataset.sources, minlength=S).astype(np.float64)
    belief = np.full((S, A), np.nan)
    seen = counts > 0
    belief[seen] = sums[seen] / counts[seen, None]
    return belief


def _belief_and_weights(
    idm: ConditionalCategorical,
    dataset: TransitionDataset,
    belief: Optional[np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    b = empirical_belief(idm, dataset) if belief is None else np.asarray(belief, dtype=np.float64)
    px = dataset.source_distribution()
    undefined = (px > 0) & np.isnan(b).any(axis=1)
    if undefined.any():
        logger.warning("excluding %d source states with undefined belief", int(undefined.sum()))
        px = np.where(undefined, 0.0, px)
        px = px / px.sum()
    return np.nan_to_num(b), px


def belief_entropy(idm: ConditionalCategorical, dataset: TransitionDataset, belief: Optional[np.ndarray] = None) -> float:
    """E_x[H_P~(Z|X)]."""
    b, px = _belief_and_weights(idm, dataset, belief)
    return float(px @ entr(b).sum(axis=1))


def exact_cmi(
    fwm: ConditionalCategorical,
    idm: ConditionalCategorical,
    dataset: TransitionDataset,
    belief: Optional[np.ndarray] = None,
) -> float:
    """I(Z; Y^ | X) under P(x) P~(z|x) P_theta(y^|x,z)."""
    b, px = _belief_and_weights(idm, dataset, belief)
    P = fwm.probabilities()  # (S, A, S)
    joint = b[:, :, None] * P  # (x, z, y^)
    marg = joint.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        post = np.where(marg > 0.0, joint / marg, 0.0)
        cond = np.where(joint > 0.0, joint * _log(post), 0.0).sum(axis=(1, 2))  # -H(Z|Y^, x)
    h_prior = entr(b).sum(axis=1)
    return max(float(px @ (h_prior + cond)), 0.0)


def fwm_objective(fwm: ConditionalCategorical, idm: ConditionalCategorical, dataset: TransitionDataset) -> float:
    """J(theta) = E_(x,y)~D E_z~Q(.|x,y) E_y^~P(.|x,z) [log Q(z|x,y^)]."""
    x, y = dataset.sources, dataset.targets
    q = idm.probabilities()[x, y]  # (n, A)
    logq_t = np.swapaxes(idm.log_probabilities(), 1, 2)  # (x, z, y^)
    inner = (fwm.probabilities() * logq_t).sum(axis=-1)  # (x, z)
    return float((q * inner[x]).sum(axis=1).mean())


def variational_cmi_bound(
    fwm: ConditionalCategorical,
    idm: ConditionalCategorical,
    dataset: TransitionDataset,
    belief: Optional[np.ndarray] = None,
) -> float:
    """E_x[H_P~(Z|X)] + E_x E_z~P~ E_y^~P_theta [log Q_phi(z|x,y^)]."""
    if belief is None:
        return belief_entropy(idm, dataset) + fwm_objective(fwm, idm, dataset)
    b, px = _belief_and_weights(idm, dataset, belief)
    logq_t = np.swapaxes(idm.log_probabilities(), 1, 2)
    inner = (fwm.probabilities() * logq_t).sum(axis=-1)
    return float(px @ entr(b).sum(axis=1) + px @ (b * inner).sum(axis=1))


# ---------------------------------------------------------------------
# Likelihood, ELBO, posterior
# ---------------------------------------------------------------------
def marginal_loglik(fwm: ConditionalCategorical, prior: Prior, dataset: TransitionDataset) -> float:
    """Mean over pairs of log sum_z prior(z|x) P_theta(y|x,z)."""
    rows = _pair_prior_rows(fwm, prior, dataset)
    logp = fwm.log_probabilities()[dataset.sources, :, dataset.targets]  # (n, A)
    return float(logsumexp(_log(rows) + logp, axis=1).mean())


def kl_regularised_objective(
    fwm: ConditionalCategorical,
    idm: ConditionalCategorical,
    prior: Prior,
    dataset: TransitionDataset,
    beta: float,
) -> float:
    """Mean over pairs of E_z~Q[log P_theta(y|x,z)] - beta KL(Q(.|x,y) || prior(.|x,y))."""
    x, y = dataset.sources, dataset.targets
    logp = fwm.log_probabilities()[x, :, y]
    logq = idm.log_probabilities()[x, y]
    q = np.exp(logq)
    reward = (q * logp).sum(axis=1)
    if beta == 0.0:
        return float(reward.mean())
    rows = _pair_prior_rows(fwm, prior, dataset)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = np.where(q > 0.0, q * (logq - _log(rows)), 0.0).sum(axis=1)
    return float((reward - beta * kl).mean())


def elbo(fwm: ConditionalCategorical, idm: ConditionalCategorical, prior: Prior, dataset: TransitionDataset) -> float:
    return kl_regularised_objective(fwm, idm, prior, dataset, beta=1.0)


def posterior_exact(fwm: ConditionalCategorical, prior: Prior, x: int, y: int) -> np.ndarray:
    """P(z|x,y) proportional to prior(z|x) P_theta(y|x,z)."""
    table = transition_prior(prior, fwm.num_states, fwm.num_actions)
    x, y = int(x), int(y)
    row = table[x, y]
    if np.isnan(row).any():
        raise ValueError(f"prior undefined at state {x}")
    w = row * fwm.probabilities()[x, :, y]
    total = w.sum()
    if not total > 0.0:
        raise EvidenceError(f"transition {x} -> {y} has zero evidence under every action")
    return w / total


def tilted_posterior(fwm: ConditionalCategorical, prior: Prior) -> ConditionalCategorical:
    """IDM whose every row is prior(z|x,y) P_theta(y|x,z), normalised.

    This is the per-context optimum of the beta = 1 phase-2 objective. Rows
    with zero evidence keep the prior; undefined prior rows become uniform.
    """
    S, A = fwm.num_states, fwm.num_actions
    table = np.nan_to_num(transition_prior(prior, S, A), nan=1.0 / A)
    lik = np.swapaxes(fwm.probabilities(), 1, 2)  # (x, y, z)
    w = table * lik
    total = w.sum(axis=-1, keepdims=True)
    post = np.where(total > 0.0, w / np.where(total > 0.0, total, 1.0), table)
    logits = np.maximum(_log(post), LOGIT_FLOOR)
    return ConditionalCategorical(role=Role.IDM, logits=logits)


def joint_posterior(fwm: ConditionalCategorical, belief: np.ndarray) -> ConditionalCategorical:
    """Exact P(z | x, y^) of the joint P~(z|x) P_theta(y^|x,z) for a fixed per-state belief."""
    b = np.asarray(belief, dtype=np.float64)
    if b.shape != (fwm.num_states, fwm.num_actions):
        raise ValueError(f"belief must have shape {(fwm.num_states, fwm.num_actions)}, got {b.shape}")
    return tilted_posterior(fwm, b)


def mean_posterior_kl(
    fwm: ConditionalCategorical,
    idm: ConditionalCategorical,
    prior: Prior,
    dataset: TransitionDataset,
) -> float:
    """Dataset mean of KL(Q_phi(.|x,y) || P(.|x,y))."""
    x, y = dataset.sources, dataset.targets
    rows = _pair_prior_rows(fwm, prior, dataset)
    log_joint = _log(rows) + fwm.log_probabilities()[x, :, y]
    log_post = log_joint - logsumexp(log_joint, axis=1, keepdims=True)
    logq = idm.log_probabilities()[x, y]
    q = np.exp(logq)
    with np.errstate(invalid="ignore"):
        kl = np.where(q > 0.0, q * (logq - log_post), 0.0).sum(axis=1)
    return float(kl.mean())


def snapshot_metrics(
    fwm: ConditionalCategorical,
    idm: ConditionalCategorical,
    reference: ReferencePolicy,
    dataset: TransitionDataset,
) -> Dict[str, float]:
    """Full analysis columns of a MetricsRecord (accuracies excluded)."""
    mll = marginal_loglik(fwm, reference, dataset)
    lb = elbo(fwm, idm, reference, dataset)
    return {
        "exact_cmi": exact_cmi(fwm, idm, dataset),
        "cmi_bound": variational_cmi_bound(fwm, idm, dataset),
        "marginal_loglik": mll,
        "elbo": lb,
        "elbo_gap": mll - lb,
    }
