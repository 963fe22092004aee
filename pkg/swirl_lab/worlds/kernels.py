from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.special import entr

from ..utils import rng_stream
from .spec import GRID_MOVES, WorldKind, WorldSpec, validate_world_dims

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class TransitionKernel:
    """Ground-truth dynamics T(y|x,z), table shape (S, A, S).

    Only data generation and evaluation read it; training never does.
    """

    spec: WorldSpec
    table: np.ndarray

    def __post_init__(self) -> None:
        t = np.array(self.table, dtype=np.float64)
        S, A = self.spec.num_states, self.spec.num_actions
        if t.shape != (S, A, S):
            raise ValueError(f"kernel table must have shape {(S, A, S)}, got {t.shape}")
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise ValueError("kernel entries must lie in [0, 1]")
        if np.max(np.abs(t.sum(axis=-1) - 1.0)) > ROW_SUM_TOL:
            raise ValueError("kernel rows must sum to 1")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def num_states(self) -> int:
        return self.spec.num_states

    @property
    def num_actions(self) -> int:
        return self.spec.num_actions

    def is_deterministic(self) -> bool:
        return bool(np.all(self.table.max(axis=-1) == 1.0))


# ---------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------
def _permutation_table(spec: WorldSpec) -> np.ndarray:
    S, A = spec.num_states, spec.num_actions
    rng = rng_stream(spec.seed, "world/permutation")
    table = np.zeros((S, A, S))
    for z in range(A):
        # numpy's permutation is a Fisher-Yates shuffle over the seeded stream
        pi = rng.permutation(S)
        table[np.arange(S), z, pi] = 1.0
    return table


def _shift_noise_table(spec: WorldSpec) -> np.ndarray:
    S, A, eps = spec.num_states, spec.num_actions, spec.noise
    table = np.full((S, A, S), eps / (S - 1))
    for x in range(S):
        for z in range(A):
            table[x, z, (x + z) % S] = 1.0 - eps
    return table


def grid_step(spec: WorldSpec, state: int, action: int) -> int:
    rows, cols = spec.grid_rows, spec.grid_cols
    r, c = divmod(state, cols)
    dr, dc = GRID_MOVES[action]
    # moves off the grid stay in place
    r = min(max(r + dr, 0), rows - 1)
    c = min(max(c + dc, 0), cols - 1)
    return r * cols + c


def _slip_grid_table(spec: WorldSpec) -> np.ndarray:
    S, slip = spec.num_states, spec.noise
    table = np.zeros((S, 4, S))
    for x in range(S):
        for z in range(4):
            table[x, z, grid_step(spec, x, z)] += 1.0 - slip
            for other in range(4):
                if other != z:
                    table[x, z, grid_step(spec, x, other)] += slip / 3.0
    return table


def build_kernel(spec: WorldSpec) -> TransitionKernel:
    validate_world_dims(
        spec.world_kind,
        spec.num_states,
        spec.num_actions,
        spec.noise,
        spec.grid_rows,
        spec.grid_cols,
    )
    if spec.world_kind == WorldKind.PERMUTATION:
        table = _permutation_table(spec)
    elif spec.world_kind == WorldKind.SHIFT_NOISE:
        table = _shift_noise_table(spec)
    else:
        table = _slip_grid_table(spec)
    kernel = TransitionKernel(spec=spec, table=table)
    logger.debug("built %s kernel S=%d A=%d", spec.world_kind.value, spec.num_states, spec.num_actions)
    return kernel


def enumerate_contexts(kernel: TransitionKernel) -> Tuple[List[Tuple[int, int]], List[Tuple[int, int]]]:
    """FWM contexts (x, z) and IDM contexts (x, y), row-major by first index then second."""
    S, A = kernel.num_states, kernel.num_actions
    fwm = [(x, z) for x in range(S) for z in range(A)]
    idm = [(x, y) for x in range(S) for y in range(S)]
    return fwm, idm


def kernel_summary(kernel: TransitionKernel) -> dict:
    t = kernel.table
    reachable = t > 0.0
    generating = reachable.sum(axis=1)  # (S, S): actions that can produce x -> y
    n_reachable = int((generating > 0).sum())
    return {
        "world_kind": kernel.spec.world_kind.value,
        "num_states": kernel.num_states,
        "num_actions": kernel.num_actions,
        "noise": kernel.spec.noise,
        "mean_row_entropy": float(entr(t).sum(axis=-1).mean()),
        "deterministic_rows": float((t.max(axis=-1) == 1.0).mean()),
        "ambiguity_rate": float((generating > 1).sum() / max(n_reachable, 1)),
    }
