from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import RoleError
from ..models.policy import (
    ConditionalCategorical,
    Context,
    ReferencePolicy,
    kl_rows,
    kl_gradient_row,
)

logger = logging.getLogger(__name__)

MAX_STEP_KL_PRODUCT = 10.0


class AdvantageMode(str, Enum):
    MEAN_STD = "mean_std"
    MEAN_ONLY = "mean_only"
    LEAVE_ONE_OUT = "leave_one_out"


class GrpoConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    group_size: int = Field(default=16, ge=2, description="G, rollouts per context.")
    kl_coeff: float = Field(default=0.0, ge=0.0, description="beta, weight of KL(policy || reference).")
    learning_rate: float = Field(default=0.05, gt=0.0, description="eta, ascent step size on logits.")
    advantage_mode: AdvantageMode = AdvantageMode.MEAN_STD
    std_epsilon: float = Field(default=1e-8, gt=0.0)

    @model_validator(mode="after")
    def _bounded_kl_step(self) -> "GrpoConfig":
        if self.learning_rate * self.kl_coeff > MAX_STEP_KL_PRODUCT:
            raise ValueError(
                f"learning_rate * kl_coeff = {self.learning_rate * self.kl_coeff} exceeds {MAX_STEP_KL_PRODUCT}"
            )
        return self


@dataclass(frozen=True)
class RolloutGroup:
    context: Context
    samples: Tuple[int, ...]
    rewards: Tuple[float, ...]

    def __post_init__(self) -> None:
        samples = tuple(int(s) for s in self.samples)
        rewards = tuple(float(r) for r in self.rewards)
        if len(samples) != len(rewards):
            raise ValueError(f"{len(samples)} samples but {len(rewards)} rewards")
        if len(samples) < 2:
            raise ValueError("a rollout group needs at least 2 samples")
        if not all(np.isfinite(rewards)) or any(r > 0.0 for r in rewards):
            raise ValueError("rewards must be finite log-probabilities (<= 0)")
        object.__setattr__(self, "context", (int(self.context[0]), int(self.context[1])))
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "rewards", rewards)


@dataclass(frozen=True)
class AdvantageVector:
    values: np.ndarray
    mode: AdvantageMode


@dataclass(frozen=True)
class StepStats:
    reward_mean: float
    reward_std: float
    mean_kl: Optional[float]
    grad_norm: float
    objective: float


def compute_advantages(
    rewards: Sequence[float],
    mode: AdvantageMode = AdvantageMode.MEAN_STD,
    std_epsilon: float = 1e-8,
) -> AdvantageVector:
    r = np.asarray(rewards, dtype=np.float64)
    mode = AdvantageMode(mode)
    if r.ndim != 1 or len(r) < 2:
        raise ValueError(f"advantages need at least 2 rewards, got {len(r)}")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    G = len(r)
    if np.ptp(r) == 0.0:
        return AdvantageVector(values=np.zeros(G), mode=mode)
    mu = r.mean()
    if mode == AdvantageMode.MEAN_STD:
        values = (r - mu) / (r.std() + std_epsilon)
    elif mode == AdvantageMode.MEAN_ONLY:
        values = r - mu
    else:
        values = r - (r.sum() - r) / (G - 1)
    return AdvantageVector(values=values, mode=mode)


# ---------------------------------------------------------------------
# Updates
# ---------------------------------------------------------------------
def _check_update_target(policy: ConditionalCategorical, config: GrpoConfig, reference: Optional[ReferencePolicy]) -> None:
    if policy.frozen:
        raise RoleError("a frozen policy cannot be the update target")
    if config.kl_coeff > 0.0 and reference is None:
        raise RoleError("kl_coeff > 0 needs a reference policy")
    if reference is not None and not policy.same_shape(reference.model):
        raise RoleError("reference policy does not match the policy's role and shape")


def _finish_step(
    policy: ConditionalCategorical,
    direction: np.ndarray,
    contexts: List[Context],
    config: GrpoConfig,
    reference: Optional[ReferencePolicy],
    reward_mean: float,
    reward_std: float,
) -> Tuple[ConditionalCategorical, StepStats]:
    """Add the KL term over the batch contexts, then take one ascent step."""
    B = len(contexts)
    idx = tuple(np.asarray(contexts, dtype=np.int64).T)
    mean_kl: Optional[float] = None

    if reference is not None:
        rows_p = policy.logits[idx]
        rows_q = reference.model.logits[idx]
        mean_kl = float(kl_rows(rows_p, rows_q).mean())
        if config.kl_coeff > 0.0:
            np.add.at(direction, idx, -config.kl_coeff * kl_gradient_row(rows_p, rows_q) / B)

    grad_norm = float(np.linalg.norm(direction))
    objective = reward_mean - (config.kl_coeff * mean_kl if mean_kl is not None else 0.0)
    stats = StepStats(
        reward_mean=reward_mean,
        reward_std=reward_std,
        mean_kl=mean_kl,
        grad_norm=grad_norm,
        objective=objective,
    )
    if not np.any(direction):
        return policy.with_logits(policy.logits), stats
    return policy.with_logits(policy.logits + config.learning_rate * direction), stats


def policy_gradient_step(
    policy: ConditionalCategorical,
    groups: Sequence[RolloutGroup],
    advantages: Sequence[AdvantageVector],
    config: GrpoConfig,
    reference: Optional[ReferencePolicy] = None,
) -> Tuple[ConditionalCategorical, StepStats]:
    """One GRPO ascent step: mean over groups of (1/G) sum_k A_k grad log pi(sample_k | context)."""
    if not groups:
        raise ValueError("policy_gradient_step needs at least one group")
    if len(groups) != len(advantages):
        raise ValueError(f"{len(groups)} groups but {len(advantages)} advantage vectors")
    _check_update_target(policy, config, reference)

    # fixed reduction order: by context, then original position
    order = sorted(range(len(groups)), key=lambda i: (groups[i].context, i))
    K = policy.outcome_dim
    direction = np.zeros_like(policy.logits)
    all_rewards = []
    for i in order:
        g, adv = groups[i], advantages[i]
        a = np.asarray(adv.values, dtype=np.float64)
        if len(a) != len(g.samples):
            raise ValueError(f"group {i}: {len(g.samples)} samples but {len(a)} advantages")
        all_rewards.extend(g.rewards)
        if not np.any(a):
            continue
        p = policy.probabilities(g.context)
        weighted = np.bincount(np.asarray(g.samples), weights=a, minlength=K)
        direction[g.context] += (weighted - a.sum() * p) / len(a)
    direction /= len(groups)

    contexts = [groups[i].context for i in order]
    rewards = np.asarray(all_rewards)
    return _finish_step(policy, direction, contexts, config, reference, float(rewards.mean()), float(rewards.std()))


def exact_gradient_step(
    policy: ConditionalCategorical,
    contexts: Sequence[Context],
    reward_rows: np.ndarray,
    config: GrpoConfig,
    reference: Optional[ReferencePolicy] = None,
) -> Tuple[ConditionalCategorical, StepStats]:
    """Like policy_gradient_step, with the inner expectation over outcomes enumerated.

    reward_rows[b, k] is the reward of outcome k in contexts[b]; the per-context
    direction is sum_k p_k r_k grad log p_k = p * (r - E_p[r]).
    """
    if len(contexts) == 0:
        raise ValueError("exact_gradient_step needs at least one context")
    reward_rows = np.asarray(reward_rows, dtype=np.float64)
    if reward_rows.shape != (len(contexts), policy.outcome_dim):
        raise ValueError(f"reward rows must have shape {(len(contexts), policy.outcome_dim)}, got {reward_rows.shape}")
    _check_update_target(policy, config, reference)

    order = sorted(range(len(contexts)), key=lambda i: (tuple(contexts[i]), i))
    direction = np.zeros_like(policy.logits)
    means, stds = [], []
    for i in order:
        ctx = policy.check_context(contexts[i])
        r = reward_rows[i]
        p = policy.probabilities(ctx)
        centred = r - p @ r
        means.append(float(p @ r))
        stds.append(float(np.sqrt(p @ centred**2)))
        if np.ptp(r) == 0.0:
            continue
        direction[ctx] += p * centred
    direction /= len(contexts)

    ordered = [policy.check_context(contexts[i]) for i in order]
    return _finish_step(policy, direction, ordered, config, reference, float(np.mean(means)), float(np.mean(stds)))
