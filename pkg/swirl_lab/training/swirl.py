from __future__ import annotations

import logging
from enum import Enum
from typing import Callable, Dict, List, Optional, Protocol, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..analytics import bounds
from ..analytics.records import MetricsRecord, TrainingTrace
from ..errors import DatasetError, RoleError
from ..models.policy import ConditionalCategorical, Context, ReferencePolicy, Role, sample_group
from ..utils import RngStreams, relative_change
from ..worlds.dataset import TransitionDataset
from .grpo import (
    GrpoConfig,
    RolloutGroup,
    StepStats,
    compute_advantages,
    exact_gradient_step,
    policy_gradient_step,
)

logger = logging.getLogger(__name__)


class GradientMode(str, Enum):
    SAMPLED = "sampled"
    EXACT = "exact"


class PhaseConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    grpo: GrpoConfig = Field(default_factory=GrpoConfig)
    steps_per_phase: int = Field(default=200, ge=1)
    batch_contexts: int = Field(default=64, ge=1, description="Pairs drawn (with replacement) per step.")
    gradient_mode: GradientMode = GradientMode.SAMPLED
    full_batch: bool = Field(default=False, description="Use every dataset pair, in order, at each step.")
    enabled: bool = Field(default=True, description="False skips the phase (single-direction variants).")


def _default_phase2() -> PhaseConfig:
    return PhaseConfig(grpo=GrpoConfig(kl_coeff=0.1))


class SwirlConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    phase1: PhaseConfig = Field(default_factory=PhaseConfig)
    phase2: PhaseConfig = Field(default_factory=_default_phase2)
    max_iterations: int = Field(default=3, ge=1)
    convergence_tol: float = Field(default=1e-4, gt=0.0)
    master_seed: int = Field(default=0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _some_phase(self) -> "SwirlConfig":
        if not (self.phase1.enabled or self.phase2.enabled):
            raise ValueError("at least one phase must be enabled")
        return self


# ---------------------------------------------------------------------
# Phase steps
# ---------------------------------------------------------------------
def _draw_batch(dataset: TransitionDataset, cfg: PhaseConfig, rng: np.random.Generator) -> np.ndarray:
    if len(dataset) == 0:
        raise DatasetError("empty dataset")
    if cfg.full_batch:
        return dataset.pairs
    idx = rng.integers(0, len(dataset), size=cfg.batch_contexts)
    return dataset.pairs[idx]


def _require(mutable: ConditionalCategorical, mutable_role: Role, frozen: ConditionalCategorical, frozen_role: Role) -> None:
    if mutable.role != mutable_role or frozen.role != frozen_role:
        raise RoleError(
            f"expected mutable {mutable_role.value} and frozen {frozen_role.value}, "
            f"got {mutable.role.value} and {frozen.role.value}"
        )
    if mutable.frozen:
        raise RoleError(f"the {mutable_role.value} being trained is frozen")
    if not frozen.frozen:
        raise RoleError(f"the scoring {frozen_role.value} must be frozen")


def phase1_step(
    fwm: ConditionalCategorical,
    idm: ConditionalCategorical,
    dataset: TransitionDataset,
    phase_cfg: PhaseConfig,
    rng: RngStreams,
) -> Tuple[ConditionalCategorical, StepStats]:
    """FWM as policy, frozen IDM as scorer: R_k = log Q_phi(z | x, y^_k)."""
    _require(fwm, Role.FWM, idm, Role.IDM)
    pairs = _draw_batch(dataset, phase_cfg, rng.root)
    q = idm.probabilities()
    logq = idm.log_probabilities()
    G = phase_cfg.grpo.group_size
    A = idm.outcome_dim

    contexts: List[Context] = []
    if phase_cfg.gradient_mode == GradientMode.EXACT:
        rows = []
        for g, (x, y) in enumerate(pairs.tolist()):
            z = int(rng.group(g).choice(A, p=q[x, y]))
            contexts.append((x, z))
            rows.append(logq[x, :, z])
        return exact_gradient_step(fwm, contexts, np.asarray(rows), phase_cfg.grpo)

    groups, advantages = [], []
    for g, (x, y) in enumerate(pairs.tolist()):
        grng = rng.group(g)
        z = int(grng.choice(A, p=q[x, y]))
        samples = sample_group(fwm, (x, z), G, grng)
        rewards = logq[x, samples, z]
        groups.append(RolloutGroup(context=(x, z), samples=tuple(samples), rewards=tuple(rewards)))
        advantages.append(compute_advantages(rewards, phase_cfg.grpo.advantage_mode, phase_cfg.grpo.std_epsilon))
    return policy_gradient_step(fwm, groups, advantages, phase_cfg.grpo)


def phase2_step(
    idm: ConditionalCategorical,
    fwm: ConditionalCategorical,
    reference: Optional[ReferencePolicy],
    dataset: TransitionDataset,
    phase_cfg: PhaseConfig,
    rng: RngStreams,
) -> Tuple[ConditionalCategorical, StepStats]:
    """IDM as policy, frozen FWM as scorer: R_k = log P_theta(y | x, z_k), KL to the iteration reference."""
    _require(idm, Role.IDM, fwm, Role.FWM)
    if phase_cfg.grpo.kl_coeff > 0.0 and reference is None:
        raise RoleError("phase 2 with kl_coeff > 0 needs the iteration's reference policy")
    pairs = _draw_batch(dataset, phase_cfg, rng.root)
    logp = fwm.log_probabilities()
    G = phase_cfg.grpo.group_size

    contexts: List[Context] = [(x, y) for x, y in pairs.tolist()]
    if phase_cfg.gradient_mode == GradientMode.EXACT:
        rows = logp[pairs[:, 0], :, pairs[:, 1]]
        return exact_gradient_step(idm, contexts, rows, phase_cfg.grpo, reference)

    groups, advantages = [], []
    for g, (x, y) in enumerate(contexts):
        samples = sample_group(idm, (x, y), G, rng.group(g))
        rewards = logp[x, samples, y]
        groups.append(RolloutGroup(context=(x, y), samples=tuple(samples), rewards=tuple(rewards)))
        advantages.append(compute_advantages(rewards, phase_cfg.grpo.advantage_mode, phase_cfg.grpo.std_epsilon))
    return policy_gradient_step(idm, groups, advantages, phase_cfg.grpo, reference)


# ---------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------
Evaluator = Callable[[ConditionalCategorical, ConditionalCategorical], Dict[str, float]]


class RunObserver(Protocol):
    def on_record(self, record: MetricsRecord) -> None: ...

    def on_phase_end(
        self,
        iteration: int,
        phase: int,
        fwm: ConditionalCategorical,
        idm: ConditionalCategorical,
        reference: ReferencePolicy,
    ) -> None: ...


def phase1_objective(fwm: ConditionalCategorical, idm: ConditionalCategorical, dataset: TransitionDataset) -> float:
    return bounds.fwm_objective(fwm, idm, dataset)


def phase2_objective(
    fwm: ConditionalCategorical,
    idm: ConditionalCategorical,
    reference: ReferencePolicy,
    dataset: TransitionDataset,
    beta: float,
) -> float:
    return bounds.kl_regularised_objective(fwm, idm, reference, dataset, beta)


class _Recorder:
    def __init__(
        self,
        dataset: TransitionDataset,
        evaluator: Optional[Evaluator],
        observer: Optional[RunObserver],
        emit_every: Optional[int],
    ):
        self.dataset = dataset
        self.evaluator = evaluator
        self.observer = observer
        self.emit_every = emit_every
        self.trace = TrainingTrace()

    def analysis(self, fwm, idm, reference) -> Dict[str, float]:
        out = bounds.snapshot_metrics(fwm, idm, reference, self.dataset)
        if self.evaluator is not None:
            out.update(self.evaluator(fwm, idm))
        return out

    def record(self, key: Tuple[int, int, int], stats: Optional[StepStats], full: Optional[Dict[str, float]]) -> None:
        fields: Dict[str, Optional[float]] = {}
        if stats is not None:
            fields.update(
                objective=stats.objective,
                reward_mean=stats.reward_mean,
                reward_std=stats.reward_std,
                mean_kl_to_ref=stats.mean_kl,
            )
        if full:
            fields.update(full)
        rec = MetricsRecord(iteration=key[0], phase=key[1], step=key[2], **fields)
        self.trace.append(rec)
        if self.observer is not None:
            self.observer.on_record(rec)

    def wants_full(self, step: int, steps: int) -> bool:
        if step == steps - 1:
            return True
        return bool(self.emit_every) and (step + 1) % self.emit_every == 0


def run(
    config: SwirlConfig,
    dataset: TransitionDataset,
    fwm: ConditionalCategorical,
    idm: ConditionalCategorical,
    *,
    emit_every: Optional[int] = None,
    evaluator: Optional[Evaluator] = None,
    observer: Optional[RunObserver] = None,
    start_iteration: int = 1,
) -> Tuple[ConditionalCategorical, ConditionalCategorical, TrainingTrace]:
    """Alternate Phase I (FWM) and Phase II (IDM) until convergence or max_iterations.

    Never reads hidden actions; `evaluator` is the caller's hook for anything
    that needs ground truth (accuracies).
    """
    if len(dataset) == 0:
        raise DatasetError("empty dataset")
    if fwm.role != Role.FWM or idm.role != Role.IDM:
        raise RoleError("run expects (fwm, idm) in that order")
    fwm, idm = fwm.thaw(), idm.thaw()
    rec = _Recorder(dataset, evaluator, observer, emit_every)
    seed = config.master_seed

    if start_iteration < 1:
        raise ValueError(f"start_iteration must be >= 1, got {start_iteration}")
    if start_iteration == 1:
        # resumed runs continue an existing trace and skip the initial snapshot
        rec.record((0, 0, 0), None, rec.analysis(fwm, idm, ReferencePolicy.snapshot(idm, iteration=0)))

    for it in range(start_iteration, start_iteration + config.max_iterations):
        reference = ReferencePolicy.snapshot(idm, iteration=it)
        changes = []

        # === Phase I: FWM policy, frozen IDM reward ===
        p1 = config.phase1
        if p1.enabled:
            frozen_idm = idm.freeze()
            before = phase1_objective(fwm, frozen_idm, dataset)
            for step in range(p1.steps_per_phase):
                fwm, stats = phase1_step(fwm, frozen_idm, dataset, p1, RngStreams(seed, "phase", it, 1, step))
                full = rec.analysis(fwm, idm, reference) if rec.wants_full(step, p1.steps_per_phase) else None
                rec.record((it, 1, step), stats, full)
                logger.debug("it=%d phase=1 step=%d objective=%.6g", it, step, stats.objective)
            after = phase1_objective(fwm, frozen_idm, dataset)
            changes.append(relative_change(before, after))
            _log_boundary(it, 1, rec.trace.last)
            if observer is not None:
                observer.on_phase_end(it, 1, fwm, idm, reference)

        # === Phase II: IDM policy, frozen FWM reward ===
        p2 = config.phase2
        if p2.enabled:
            frozen_fwm = fwm.freeze()
            beta = p2.grpo.kl_coeff
            before = phase2_objective(frozen_fwm, idm, reference, dataset, beta)
            for step in range(p2.steps_per_phase):
                idm, stats = phase2_step(idm, frozen_fwm, reference, dataset, p2, RngStreams(seed, "phase", it, 2, step))
                full = rec.analysis(fwm, idm, reference) if rec.wants_full(step, p2.steps_per_phase) else None
                rec.record((it, 2, step), stats, full)
                logger.debug("it=%d phase=2 step=%d objective=%.6g", it, step, stats.objective)
            after = phase2_objective(frozen_fwm, idm, reference, dataset, beta)
            changes.append(relative_change(before, after))
            _log_boundary(it, 2, rec.trace.last)
            if observer is not None:
                observer.on_phase_end(it, 2, fwm, idm, reference)

        if all(c < config.convergence_tol for c in changes):
            logger.info("converged at iteration %d (relative changes %s)", it, ", ".join(f"{c:.3g}" for c in changes))
            break

    return fwm, idm, rec.trace


def _log_boundary(iteration: int, phase: int, record: Optional[MetricsRecord]) -> None:
    if record is None:
        return
    logger.info(
        "iteration %d phase %d: objective=%.6g elbo=%s cmi_bound=%s fwm_acc=%s idm_acc=%s",
        iteration,
        phase,
        record.objective if record.objective is not None else float("nan"),
        record.elbo,
        record.cmi_bound,
        record.fwm_accuracy,
        record.idm_accuracy,
    )
