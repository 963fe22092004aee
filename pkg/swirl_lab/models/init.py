from __future__ import annotations

from typing import Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..errors import DatasetError, RoleError
from ..utils import rng_stream
from ..worlds.dataset import LabelledSubset
from ..worlds.kernels import TransitionKernel
from .policy import LOGIT_FLOOR, ConditionalCategorical, Role, role_shape


class _InitKind(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class UniformInit(_InitKind):
    kind: Literal["uniform"] = "uniform"


class KernelNoisyInit(_InitKind):
    kind: Literal["from_kernel_noisy"] = "from_kernel_noisy"
    corruption: float = Field(default=0.3, ge=0.0, le=1.0, description="eta: weight of the uniform mixture.")


class LabelledSftInit(_InitKind):
    kind: Literal["from_labelled_sft"] = "from_labelled_sft"
    smoothing: float = Field(default=1.0, ge=0.0, description="alpha: add-alpha count smoothing.")


class RandomInit(_InitKind):
    kind: Literal["random"] = "random"
    scale: float = Field(default=1.0, gt=0.0)


InitKind = Union[UniformInit, KernelNoisyInit, LabelledSftInit, RandomInit]


def _safe_log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(p), LOGIT_FLOOR)


def _labelled_counts(role: Role, shape: Tuple[int, int, int], labelled: LabelledSubset) -> np.ndarray:
    counts = np.zeros(shape)
    x, y, z = labelled.sources, labelled.targets, labelled.actions
    if role == Role.FWM:
        np.add.at(counts, (x, z, y), 1.0)
    else:
        np.add.at(counts, (x, y, z), 1.0)
    return counts


def init_policy(
    role: Role,
    dims: Tuple[int, int],
    init_kind: InitKind,
    seed: int = 0,
    *,
    kernel: Optional[TransitionKernel] = None,
    labelled: Optional[LabelledSubset] = None,
) -> ConditionalCategorical:
    """Starting policy for either role; dims = (num_states, num_actions)."""
    role = Role(role)
    num_states, num_actions = dims
    shape = role_shape(role, num_states, num_actions)

    if isinstance(init_kind, UniformInit):
        logits = np.zeros(shape)

    elif isinstance(init_kind, RandomInit):
        rng = rng_stream(seed, f"init/{role.value}")
        logits = rng.normal(0.0, init_kind.scale, size=shape)

    elif isinstance(init_kind, KernelNoisyInit):
        if role != Role.FWM:
            raise RoleError("from_kernel_noisy is defined for the fwm role only")
        if kernel is None:
            raise ValueError("from_kernel_noisy needs the transition kernel")
        if kernel.table.shape != shape:
            raise RoleError(f"kernel shape {kernel.table.shape} does not match fwm shape {shape}")
        eta = init_kind.corruption
        mixed = (1.0 - eta) * kernel.table + eta / num_states
        logits = _safe_log(mixed)

    elif isinstance(init_kind, LabelledSftInit):
        if labelled is None or len(labelled) == 0:
            raise DatasetError("from_labelled_sft needs a non-empty labelled subset")
        counts = _labelled_counts(role, shape, labelled) + init_kind.smoothing
        totals = counts.sum(axis=-1, keepdims=True)
        # contexts with no evidence and no smoothing fall back to uniform
        freqs = np.where(totals > 0.0, counts / np.where(totals > 0.0, totals, 1.0), 1.0 / shape[-1])
        logits = _safe_log(freqs)

    else:  # pragma: no cover
        raise TypeError(f"unknown init kind {init_kind!r}")

    return ConditionalCategorical(role=role, logits=logits)
