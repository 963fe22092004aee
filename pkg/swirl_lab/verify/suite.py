from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from ..analytics import bounds
from ..models.policy import ConditionalCategorical, ReferencePolicy, Role, grad_log_prob, kl_gradient_row, kl_rows, log_prob
from ..training.grpo import AdvantageMode, GrpoConfig
from ..training.swirl import GradientMode, PhaseConfig, phase1_step, phase2_step
from ..utils import RngStreams
from .oracle import (
    estimator_expectation_test,
    exact_phase1_gradient,
    exact_phase2_gradient,
    finite_difference,
    phase1_scorer,
    random_instance,
    relative_error,
)

logger = logging.getLogger(__name__)

BOUND_TOL = 1e-9
GRAD_REL_TOL = 1e-5
ESTIMATOR_REL_TOL = 0.02


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: measured={self.measured:.3e} tol={self.tolerance:.1e} ({self.seconds:.2f}s)"


@dataclass(frozen=True)
class SuiteOptions:
    instances: int = 100
    gradient_instances: int = 20
    estimator_trials: int = 10**5
    monotone_steps: int = 200
    seed: int = 0


# -------------------------
# Bounds
# -------------------------
def check_bound_chain(opts: SuiteOptions) -> List[CheckResult]:
    worst_cmi = worst_elbo = worst_cmi_tight = worst_elbo_tight = -math.inf
    for i in range(opts.instances):
        inst = random_instance(opts.seed + i)
        fwm, idm, ref, ds = inst.fwm, inst.idm, inst.reference, inst.dataset
        worst_cmi = max(worst_cmi, bounds.variational_cmi_bound(fwm, idm, ds) - bounds.exact_cmi(fwm, idm, ds))
        worst_elbo = max(worst_elbo, bounds.elbo(fwm, idm, ref, ds) - bounds.marginal_loglik(fwm, ref, ds))

        belief = bounds.empirical_belief(idm, ds)
        q_star = bounds.joint_posterior(fwm, belief)
        tight = abs(
            bounds.exact_cmi(fwm, q_star, ds, belief=belief)
            - bounds.variational_cmi_bound(fwm, q_star, ds, belief=belief)
        )
        worst_cmi_tight = max(worst_cmi_tight, tight)
        post = bounds.tilted_posterior(fwm, ref)
        worst_elbo_tight = max(
            worst_elbo_tight, abs(bounds.marginal_loglik(fwm, ref, ds) - bounds.elbo(fwm, post, ref, ds))
        )
    return [
        CheckResult("cmi_bound_below_exact", worst_cmi <= BOUND_TOL, worst_cmi, BOUND_TOL),
        CheckResult("elbo_below_marginal", worst_elbo <= BOUND_TOL, worst_elbo, BOUND_TOL),
        CheckResult("cmi_bound_tight_at_posterior", worst_cmi_tight < BOUND_TOL, worst_cmi_tight, BOUND_TOL),
        CheckResult("elbo_tight_at_posterior", worst_elbo_tight < BOUND_TOL, worst_elbo_tight, BOUND_TOL),
    ]


def check_elbo_gap_identity(opts: SuiteOptions) -> List[CheckResult]:
    worst = 0.0
    for i in range(opts.instances):
        inst = random_instance(opts.seed + i)
        fwm, idm, ref, ds = inst.fwm, inst.idm, inst.reference, inst.dataset
        gap = bounds.marginal_loglik(fwm, ref, ds) - bounds.elbo(fwm, idm, ref, ds)
        kls = []
        for x, y in ds.pairs.tolist():
            post = bounds.posterior_exact(fwm, ref, x, y)
            q = idm.probabilities((x, y))
            kls.append(float(np.sum(q * (np.log(q) - np.log(post)))))
        worst = max(worst, abs(gap - math.fsum(kls) / len(kls)))
    return [CheckResult("elbo_gap_equals_posterior_kl", worst < BOUND_TOL, worst, BOUND_TOL)]


# -------------------------
# Gradients
# -------------------------
def check_gradients(opts: SuiteOptions) -> List[CheckResult]:
    worst = {"phase1_gradient": 0.0, "phase2_gradient": 0.0, "grad_log_prob": 0.0, "kl_gradient": 0.0}
    for i in range(opts.gradient_instances):
        inst = random_instance(opts.seed + 1000 + i, n=20)
        fwm, idm, ref, ds = inst.fwm, inst.idm, inst.reference, inst.dataset

        g1 = exact_phase1_gradient(fwm, idm, ds)
        fd1 = finite_difference(lambda t: bounds.fwm_objective(fwm.with_logits(t), idm, ds), fwm.logits)
        worst["phase1_gradient"] = max(worst["phase1_gradient"], relative_error(g1, fd1))

        beta = 1.0 if i % 2 == 0 else 0.3
        g2 = exact_phase2_gradient(idm, fwm, ref, beta, ds)
        fd2 = finite_difference(
            lambda t: bounds.kl_regularised_objective(fwm, idm.with_logits(t), ref, ds, beta), idm.logits
        )
        worst["phase2_gradient"] = max(worst["phase2_gradient"], relative_error(g2, fd2))

        x, y = (int(v) for v in ds.pairs[0])
        ctx, k = (x, y), i % idm.num_actions
        analytic = grad_log_prob(idm, ctx, k).dense(idm.logits.shape)
        fd3 = finite_difference(lambda t: log_prob(idm.with_logits(t), ctx, k), idm.logits)
        worst["grad_log_prob"] = max(worst["grad_log_prob"], relative_error(analytic, fd3))

        row_p, row_q = idm.logits[ctx], ref.model.logits[ctx]
        fd4 = finite_difference(lambda t: float(kl_rows(t, row_q)), row_p)
        worst["kl_gradient"] = max(worst["kl_gradient"], relative_error(kl_gradient_row(row_p, row_q), fd4))
    return [CheckResult(name, err < GRAD_REL_TOL, err, GRAD_REL_TOL) for name, err in worst.items()]


def check_estimator(opts: SuiteOptions) -> List[CheckResult]:
    inst = random_instance(opts.seed + 2000, num_states=3, num_actions=2)
    x, z = 0, 1
    scorer = phase1_scorer(inst.idm, x, z)
    out = []
    for G in (8, 64):
        cfg = GrpoConfig(group_size=G, advantage_mode=AdvantageMode.LEAVE_ONE_OUT)
        report = estimator_expectation_test(inst.fwm, scorer, (x, z), cfg, opts.estimator_trials, opts.seed)
        out.append(
            CheckResult(
                f"estimator_leave_one_out_G{G}",
                report.relative_error < ESTIMATOR_REL_TOL,
                report.relative_error,
                ESTIMATOR_REL_TOL,
            )
        )
    return out


# -------------------------
# Coordinate ascent and fixed points
# -------------------------
def check_monotone_ascent(opts: SuiteOptions) -> List[CheckResult]:
    inst = random_instance(opts.seed + 3000, n=30)
    ds = inst.dataset

    p2 = PhaseConfig(
        grpo=GrpoConfig(kl_coeff=1.0, learning_rate=1e-2),
        gradient_mode=GradientMode.EXACT,
        full_batch=True,
    )
    fwm, idm = inst.fwm.freeze(), inst.idm
    ref = ReferencePolicy.snapshot(idm, iteration=1)
    worst2 = 0.0
    value = bounds.elbo(fwm, idm, ref, ds)
    for step in range(opts.monotone_steps):
        idm, _ = phase2_step(idm, fwm, ref, ds, p2, RngStreams(opts.seed, "verify/phase2", step))
        nxt = bounds.elbo(fwm, idm, ref, ds)
        worst2 = max(worst2, value - nxt)
        value = nxt

    p1 = PhaseConfig(grpo=GrpoConfig(learning_rate=1e-3), gradient_mode=GradientMode.EXACT, full_batch=True)
    fwm, idm = inst.fwm, inst.idm.freeze()
    worst1 = 0.0
    value = bounds.variational_cmi_bound(fwm, idm, ds)
    for step in range(opts.monotone_steps):
        fwm, _ = phase1_step(fwm, idm, ds, p1, RngStreams(opts.seed, "verify/phase1", step))
        nxt = bounds.variational_cmi_bound(fwm, idm, ds)
        worst1 = max(worst1, value - nxt)
        value = nxt
    return [
        CheckResult("phase2_elbo_monotone", worst2 <= BOUND_TOL, worst2, BOUND_TOL),
        CheckResult("phase1_bound_monotone", worst1 <= BOUND_TOL, worst1, BOUND_TOL),
    ]


def check_stationarity(opts: SuiteOptions) -> List[CheckResult]:
    inst = random_instance(opts.seed + 4000)
    ds, ref = inst.dataset, inst.reference
    S, A = inst.fwm.num_states, inst.fwm.num_actions

    post = bounds.tilted_posterior(inst.fwm, ref)
    n_post = float(np.linalg.norm(exact_phase2_gradient(post, inst.fwm, ref, 1.0, ds)))

    uniform_idm = ConditionalCategorical(role=Role.IDM, logits=np.zeros((S, S, A)))
    n_uniform = float(np.linalg.norm(exact_phase1_gradient(inst.fwm, uniform_idm, ds)))

    flat = np.repeat(inst.fwm.logits[:, :1, :], A, axis=1)
    flat_fwm = ConditionalCategorical(role=Role.FWM, logits=flat)
    n_flat = float(np.linalg.norm(exact_phase2_gradient(inst.idm, flat_fwm, None, 0.0, ds)))
    return [
        CheckResult("phase2_stationary_at_tilted_posterior", n_post < 1e-8, n_post, 1e-8),
        CheckResult("phase1_zero_gradient_uniform_idm", n_uniform < 1e-12, n_uniform, 1e-12),
        CheckResult("phase2_zero_gradient_flat_fwm", n_flat < 1e-12, n_flat, 1e-12),
    ]


def check_degenerate_scorer(opts: SuiteOptions) -> List[CheckResult]:
    inst = random_instance(opts.seed + 5000)
    S, A = inst.fwm.num_states, inst.fwm.num_actions
    uniform_idm = ConditionalCategorical(role=Role.IDM, logits=np.zeros((S, S, A)), frozen=True)
    changed = 0.0
    for mode in (GradientMode.SAMPLED, GradientMode.EXACT):
        cfg = PhaseConfig(gradient_mode=mode, steps_per_phase=20, batch_contexts=16)
        fwm = inst.fwm
        for step in range(cfg.steps_per_phase):
            fwm, _ = phase1_step(fwm, uniform_idm, inst.dataset, cfg, RngStreams(opts.seed, "verify/noop", step))
        changed = max(changed, float(np.max(np.abs(fwm.logits - inst.fwm.logits))))
    return [CheckResult("uniform_scorer_leaves_fwm_unchanged", changed == 0.0, changed, 0.0)]


CHECKS: List[Callable[[SuiteOptions], List[CheckResult]]] = [
    check_bound_chain,
    check_elbo_gap_identity,
    check_gradients,
    check_estimator,
    check_monotone_ascent,
    check_stationarity,
    check_degenerate_scorer,
]


def run_suite(opts: SuiteOptions = SuiteOptions()) -> List[CheckResult]:
    results: List[CheckResult] = []
    for check in CHECKS:
        t0 = time.perf_counter()
        group = check(opts)
        elapsed = time.perf_counter() - t0
        logger.info("%s: %d checks in %.2fs", check.__name__, len(group), elapsed)
        for r in group:
            results.append(CheckResult(r.name, r.passed, r.measured, r.tolerance, elapsed / len(group)))
    return results
