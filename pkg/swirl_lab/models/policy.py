from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Tuple

import numpy as np
from scipy.special import entr, log_softmax, softmax

from ..errors import ContextIndexError, RoleError

Context = Tuple[int, int]

# log of a structurally-zero probability in closed-form initialisations
LOGIT_FLOOR = -40.0


class Role(str, Enum):
    FWM = "fwm"  # P_theta(y | x, z): contexts (S, A), outcomes S
    IDM = "idm"  # Q_phi(z | x, y): contexts (S, S), outcomes A


def role_shape(role: Role, num_states: int, num_actions: int) -> Tuple[int, int, int]:
    if role == Role.FWM:
        return (num_states, num_actions, num_states)
    return (num_states, num_states, num_actions)


@dataclass(frozen=True)
class ConditionalCategorical:
    """One independent softmax row per context.

    Value type: updates return a new instance. A frozen instance has a
    read-only logit table and is rejected as an update target.
    """

    role: Role
    logits: np.ndarray
    frozen: bool = False

    def __post_init__(self) -> None:
        role = Role(self.role)
        logits = np.array(self.logits, dtype=np.float64)
        if logits.ndim != 3:
            raise RoleError(f"logit table must be 3-D, got shape {logits.shape}")
        d1, d2, k = logits.shape
        if role == Role.FWM and d1 != k:
            raise RoleError(f"fwm table must be (S, A, S), got {logits.shape}")
        if role == Role.IDM and d1 != d2:
            raise RoleError(f"idm table must be (S, S, A), got {logits.shape}")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        if self.frozen:
            logits.setflags(write=False)
        object.__setattr__(self, "role", role)
        object.__setattr__(self, "logits", logits)

    @property
    def context_dims(self) -> Tuple[int, int]:
        return self.logits.shape[0], self.logits.shape[1]

    @property
    def outcome_dim(self) -> int:
        return self.logits.shape[2]

    @property
    def num_states(self) -> int:
        return self.logits.shape[0]

    @property
    def num_actions(self) -> int:
        return self.logits.shape[1] if self.role == Role.FWM else self.logits.shape[2]

    def check_context(self, context: Context) -> Context:
        i, j = int(context[0]), int(context[1])
        d1, d2 = self.context_dims
        if not (0 <= i < d1 and 0 <= j < d2):
            raise ContextIndexError(f"context {(i, j)} outside {self.role.value} dims {(d1, d2)}")
        return i, j

    def check_outcome(self, outcome: int) -> int:
        k = int(outcome)
        if not 0 <= k < self.outcome_dim:
            raise ContextIndexError(f"outcome {k} outside range 0..{self.outcome_dim - 1}")
        return k

    def probabilities(self, context: Context | None = None) -> np.ndarray:
        if context is None:
            return softmax(self.logits, axis=-1)
        i, j = self.check_context(context)
        return softmax(self.logits[i, j])

    def log_probabilities(self, context: Context | None = None) -> np.ndarray:
        if context is None:
            return log_softmax(self.logits, axis=-1)
        i, j = self.check_context(context)
        return log_softmax(self.logits[i, j])

    def with_logits(self, logits: np.ndarray) -> "ConditionalCategorical":
        return ConditionalCategorical(role=self.role, logits=logits, frozen=self.frozen)

    def freeze(self) -> "ConditionalCategorical":
        return ConditionalCategorical(role=self.role, logits=self.logits, frozen=True)

    def thaw(self) -> "ConditionalCategorical":
        return ConditionalCategorical(role=self.role, logits=self.logits, frozen=False)

    def same_shape(self, other: "ConditionalCategorical") -> bool:
        return self.role == other.role and self.logits.shape == other.logits.shape


@dataclass(frozen=True)
class ReferencePolicy:
    """Frozen IDM snapshot taken at the start of a SWIRL iteration."""

    model: ConditionalCategorical
    iteration: int = 0

    @classmethod
    def snapshot(cls, model: ConditionalCategorical, iteration: int = 0) -> "ReferencePolicy":
        return cls(model=model.freeze(), iteration=iteration)

    def prior_table(self) -> np.ndarray:
        """pi_ref(z | x, y) for every transition, shape (S, S, A)."""
        return self.model.probabilities()


# ---------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class RowGradient:
    """Gradient that is nonzero on a single context's logit row."""

    context: Context
    values: np.ndarray

    def dense(self, shape: Tuple[int, int, int]) -> np.ndarray:
        out = np.zeros(shape)
        out[self.context] = self.values
        return out


def log_prob(model: ConditionalCategorical, context: Context, outcome: int) -> float:
    k = model.check_outcome(outcome)
    return float(model.log_probabilities(context)[k])


def sample_group(
    model: ConditionalCategorical,
    context: Context,
    group_size: int,
    rng: np.random.Generator,
) -> List[int]:
    if group_size < 2:
        raise ValueError(f"group size must be >= 2, got {group_size}")
    p = model.probabilities(context)
    return rng.choice(model.outcome_dim, size=group_size, p=p).tolist()


def grad_log_prob(model: ConditionalCategorical, context: Context, outcome: int) -> RowGradient:
    """d log p_k / d logits[i, j, :] = onehot(k) - softmax(logits[i, j])."""
    i, j = model.check_context(context)
    k = model.check_outcome(outcome)
    g = -model.probabilities((i, j))
    g[k] += 1.0
    return RowGradient(context=(i, j), values=g)


def kl_rows(p_logits: np.ndarray, q_logits: np.ndarray) -> np.ndarray:
    logp = log_softmax(p_logits, axis=-1)
    logq = log_softmax(q_logits, axis=-1)
    p = np.exp(logp)
    terms = np.where(p > 0.0, p * (logp - logq), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


def kl_divergence(p: ConditionalCategorical, q: ConditionalCategorical, context: Context) -> float:
    if not p.same_shape(q):
        raise RoleError(
            f"KL needs matching models, got {p.role.value}{p.logits.shape} vs {q.role.value}{q.logits.shape}"
        )
    i, j = p.check_context(context)
    return float(kl_rows(p.logits[i, j], q.logits[i, j]))


def kl_gradient_row(p_logits: np.ndarray, q_logits: np.ndarray) -> np.ndarray:
    """Gradient of KL(softmax(p) || softmax(q)) with respect to p's logits."""
    logp = log_softmax(p_logits, axis=-1)
    logq = log_softmax(q_logits, axis=-1)
    p = np.exp(logp)
    diff = logp - logq
    kl = (p * diff).sum(axis=-1, keepdims=True)
    return p * (diff - kl)


def entropy(model: ConditionalCategorical, context: Context) -> float:
    return float(entr(model.probabilities(context)).sum())
