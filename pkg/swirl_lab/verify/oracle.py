"""Brute-force verifiers.

Written with explicit loops against the definitions and sharing nothing with
the training path beyond the data types, so agreement between the two is
evidence rather than tautology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..errors import InstanceTooLargeError
from ..models.init import RandomInit, init_policy
from ..models.policy import ConditionalCategorical, Context, ReferencePolicy, Role
from ..training.grpo import AdvantageMode, GrpoConfig, compute_advantages
from ..utils import rng_stream
from ..worlds.dataset import TransitionDataset, sample_dataset, uniform_prior
from ..worlds.kernels import TransitionKernel, build_kernel
from ..worlds.spec import WorldKind, WorldSpec

MAX_ENTRIES = 10**6


def _guard(*dims: int) -> None:
    entries = math.prod(dims)
    if entries > MAX_ENTRIES:
        raise InstanceTooLargeError(f"instance has {entries} table entries, oracle limit is {MAX_ENTRIES}")


def _softmax_row(row: np.ndarray) -> np.ndarray:
    m = max(float(v) for v in row)
    e = [math.exp(float(v) - m) for v in row]
    total = math.fsum(e)
    return np.array([v / total for v in e])


def _pair_weights(dataset: TransitionDataset) -> dict:
    w: dict = {}
    n = len(dataset)
    for x, y in dataset.pairs.tolist():
        w[(x, y)] = w.get((x, y), 0.0) + 1.0 / n
    return w


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-300)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b))) / denom


# ---------------------------------------------------------------------
# Exact phase gradients
# ---------------------------------------------------------------------
def exact_phase1_gradient(
    fwm: ConditionalCategorical,
    idm: ConditionalCategorical,
    dataset: TransitionDataset,
) -> np.ndarray:
    """Gradient over FWM logits of E_D sum_z Q(z|x,y) sum_y^ P(y^|x,z) log Q(z|x,y^)."""
    S, A = fwm.num_states, fwm.num_actions
    _guard(S, A, S)
    _guard(S, S, A)
    grad = np.zeros((S, A, S))
    for (x, y), w in sorted(_pair_weights(dataset).items()):
        q_pair = _softmax_row(idm.logits[x, y])
        for z in range(A):
            p = _softmax_row(fwm.logits[x, z])
            for yh in range(S):
                reward = math.log(_softmax_row(idm.logits[x, yh])[z])
                coeff = w * q_pair[z] * p[yh] * reward
                for k in range(S):
                    grad[x, z, k] += coeff * ((1.0 if k == yh else 0.0) - p[k])
    return grad


def exact_phase2_gradient(
    idm: ConditionalCategorical,
    fwm: ConditionalCategorical,
    reference: Optional[ReferencePolicy],
    beta: float,
    dataset: TransitionDataset,
) -> np.ndarray:
    """Gradient over IDM logits of E_D [E_z~Q log P(y|x,z) - beta KL(Q(.|x,y) || ref(.|x,y))]."""
    S, A = idm.num_states, idm.num_actions
    _guard(S, S, A)
    if beta > 0.0 and reference is None:
        raise ValueError("beta > 0 needs a reference policy")
    grad = np.zeros((S, S, A))
    for (x, y), w in sorted(_pair_weights(dataset).items()):
        q = _softmax_row(idm.logits[x, y])
        ref = _softmax_row(reference.model.logits[x, y]) if reference is not None else None
        h = []
        for z in range(A):
            value = math.log(_softmax_row(fwm.logits[x, z])[y])
            if beta > 0.0:
                value -= beta * (math.log(q[z]) - math.log(ref[z]))
            h.append(value)
        # d q_z / d l_k = q_z (delta_zk - q_k); the derivative of h through q cancels in expectation
        for k in range(A):
            grad[x, y, k] += w * math.fsum(q[z] * ((1.0 if z == k else 0.0) - q[k]) * h[z] for z in range(A))
    return grad


def finite_difference(fn: Callable[[np.ndarray], float], table: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a logit table, one coordinate at a time."""
    if not step > 0.0:
        raise ValueError(f"step must be positive, got {step}")
    base = np.array(table, dtype=np.float64)
    grad = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        plus = base.copy()
        minus = base.copy()
        plus[idx] += step
        minus[idx] -= step
        f_plus, f_minus = float(fn(plus)), float(fn(minus))
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise ValueError(f"non-finite function value at coordinate {idx}")
        grad[idx] = (f_plus - f_minus) / (2.0 * step)
    return grad


# ---------------------------------------------------------------------
# Estimator expectation
# ---------------------------------------------------------------------
def phase1_scorer(idm: ConditionalCategorical, x: int, z: int) -> np.ndarray:
    """Reward of each FWM outcome y^ in context (x, z): log Q(z | x, y^)."""
    return np.array([math.log(_softmax_row(idm.logits[x, yh])[z]) for yh in range(idm.num_states)])


def phase2_scorer(fwm: ConditionalCategorical, x: int, y: int) -> np.ndarray:
    """Reward of each IDM outcome z in context (x, y): log P(y | x, z)."""
    return np.array([math.log(_softmax_row(fwm.logits[x, z])[y]) for z in range(fwm.num_actions)])


def uniform_scorer(num_outcomes: int) -> np.ndarray:
    return np.full(num_outcomes, -math.log(num_outcomes))


def exact_context_gradient(policy: ConditionalCategorical, context: Context, scorer: np.ndarray) -> np.ndarray:
    """sum_k p_k r_k (onehot(k) - p) over the context's logit row."""
    p = _softmax_row(policy.logits[context])
    K = len(p)
    g = np.zeros(K)
    for k in range(K):
        for j in range(K):
            g[j] += p[k] * scorer[k] * ((1.0 if j == k else 0.0) - p[j])
    return g


@dataclass(frozen=True)
class EstimatorReport:
    mode: AdvantageMode
    group_size: int
    trials: int
    mean_direction: np.ndarray
    exact_gradient: np.ndarray
    relative_error: float
    standard_error: float
    unbiased_mode: bool

    @property
    def direction_norm(self) -> float:
        return float(np.linalg.norm(self.mean_direction))


def estimator_expectation_test(
    policy: ConditionalCategorical,
    scorer: np.ndarray,
    context: Context,
    grpo_cfg: GrpoConfig,
    trials: int = 10**5,
    seed: int = 0,
) -> EstimatorReport:
    """Average the sampled GRPO direction for one context over `trials` independent groups.

    Only leave_one_out advantages are unbiased for the exact gradient; for the
    other modes the report is informative, not a pass criterion.
    """
    ctx = policy.check_context(context)
    scorer = np.asarray(scorer, dtype=np.float64)
    p = policy.probabilities(ctx)
    K, G = len(p), grpo_cfg.group_size
    if scorer.shape != (K,):
        raise ValueError(f"scorer must give one reward per outcome ({K}), got shape {scorer.shape}")

    rng = rng_stream(seed, "oracle/estimator", *ctx)
    samples = rng.choice(K, size=(trials, G), p=p)
    rewards = scorer[samples]
    directions = np.zeros((trials, K))
    for m in range(trials):
        adv = compute_advantages(rewards[m], grpo_cfg.advantage_mode, grpo_cfg.std_epsilon).values
        if not np.any(adv):
            continue
        directions[m] = (np.bincount(samples[m], weights=adv, minlength=K) - adv.sum() * p) / G

    mean = directions.mean(axis=0)
    se = float(np.linalg.norm(directions.std(axis=0, ddof=1) / math.sqrt(trials)))
    exact = exact_context_gradient(policy, ctx, scorer)
    return EstimatorReport(
        mode=grpo_cfg.advantage_mode,
        group_size=G,
        trials=trials,
        mean_direction=mean,
        exact_gradient=exact,
        relative_error=relative_error(mean, exact),
        standard_error=se,
        unbiased_mode=grpo_cfg.advantage_mode == AdvantageMode.LEAVE_ONE_OUT,
    )


# ---------------------------------------------------------------------
# Random instances
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class Instance:
    kernel: TransitionKernel
    dataset: TransitionDataset
    fwm: ConditionalCategorical
    idm: ConditionalCategorical
    reference: ReferencePolicy


def random_instance(
    seed: int,
    num_states: Optional[int] = None,
    num_actions: Optional[int] = None,
    n: int = 40,
    scale: float = 1.0,
) -> Instance:
    """Noisy shift world with full kernel support and random logit tables (S <= 6, A <= 4 by default)."""
    rng = rng_stream(seed, "oracle/instance")
    S = int(num_states) if num_states is not None else int(rng.integers(2, 7))
    A = int(num_actions) if num_actions is not None else int(rng.integers(2, min(4, S) + 1))
    spec = WorldSpec(world_kind=WorldKind.SHIFT_NOISE, num_states=S, num_actions=A, noise=0.2, seed=seed)
    kernel = build_kernel(spec)
    dataset = sample_dataset(kernel, uniform_prior(A), n, seed)
    init = RandomInit(scale=scale)
    fwm = init_policy(Role.FWM, (S, A), init, seed)
    idm = init_policy(Role.IDM, (S, A), init, seed)
    ref_model = init_policy(Role.IDM, (S, A), init, seed + 1)
    return Instance(
        kernel=kernel,
        dataset=dataset,
        fwm=fwm,
        idm=idm,
        reference=ReferencePolicy.snapshot(ref_model, iteration=0),
    )
