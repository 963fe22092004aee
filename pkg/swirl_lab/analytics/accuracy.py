"""Argmax accuracy against the ground-truth kernel.

This is the only module besides dataset I/O that reads hidden actions.
Argmax ties resolve toward the smallest index (numpy's argmax).
"""

from __future__ import annotations

import numpy as np

from ..models.policy import ConditionalCategorical, Role
from ..worlds.dataset import TransitionDataset
from ..worlds.kernels import TransitionKernel

TIE_TOL = 1e-12


def _top_set(rows: np.ndarray) -> np.ndarray:
    return rows >= rows.max(axis=-1, keepdims=True) - TIE_TOL


def fwm_accuracy(fwm: ConditionalCategorical, kernel: TransitionKernel, dataset: TransitionDataset) -> float:
    """Fraction of distinct (x, z*) contexts whose predicted next state is a most likely kernel outcome."""
    z = dataset.reveal_hidden_actions()
    contexts = np.unique(np.stack([dataset.sources, z], axis=1), axis=0)
    x, a = contexts[:, 0], contexts[:, 1]
    pred = np.argmax(fwm.logits[x, a], axis=-1)
    top = _top_set(kernel.table[x, a])
    return float(top[np.arange(len(pred)), pred].mean())


def idm_accuracy(idm: ConditionalCategorical, kernel: TransitionKernel, dataset: TransitionDataset) -> float:
    """Fraction of pairs where the predicted action is z*, or a MAP action under T(y|x,z) prior(z)."""
    x, y = dataset.sources, dataset.targets
    z = dataset.reveal_hidden_actions()
    pred = np.argmax(idm.logits[x, y], axis=-1)
    score = kernel.table[x, :, y] * dataset.action_prior[None, :]
    best = _top_set(score)[np.arange(len(pred)), pred]
    return float(((pred == z) | best).mean())


def dynamics_accuracy(model: ConditionalCategorical, kernel: TransitionKernel, dataset: TransitionDataset) -> float:
    if model.role == Role.FWM:
        return fwm_accuracy(model, kernel, dataset)
    return idm_accuracy(model, kernel, dataset)
