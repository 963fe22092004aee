import math

import numpy as np
import pytest

from conftest import make_dataset, uniform_model
from swirl_lab.analytics import bounds
from swirl_lab.analytics.accuracy import dynamics_accuracy, fwm_accuracy, idm_accuracy
from swirl_lab.analytics.records import METRICS_COLUMNS, MetricsRecord, TrainingTrace
from swirl_lab.analytics.report import (
    distribution_table,
    frame_to_trace,
    load_trace,
    metrics_table,
    phase_summary,
    trace_frame,
)
from swirl_lab.errors import EvidenceError
from swirl_lab.models.init import KernelNoisyInit, RandomInit, init_policy
from swirl_lab.models.policy import ConditionalCategorical, Role
from swirl_lab.store import RunStore
from swirl_lab.utils import rng_stream
from swirl_lab.verify.oracle import random_instance
from swirl_lab.worlds.dataset import sample_dataset, uniform_prior
from swirl_lab.worlds.kernels import build_kernel
from swirl_lab.worlds.spec import WorldSpec


def _flat_fwm(fwm):
    """Same next-state distribution for every action."""
    A = fwm.num_actions
    return fwm.with_logits(np.repeat(fwm.logits[:, :1, :], A, axis=1))


def _invertible_world(S=4, A=4):
    spec = WorldSpec(world_kind="shift_noise", num_states=S, num_actions=A, noise=0.0, seed=3)
    kernel = build_kernel(spec)
    fwm = init_policy(Role.FWM, (S, A), KernelNoisyInit(corruption=0.0), kernel=kernel)
    return kernel, fwm, sample_dataset(kernel, uniform_prior(A), 50, seed=1)


def _cmi_by_enumeration(fwm, belief, px):
    S, A = belief.shape
    P = fwm.probabilities()
    total = []
    for x in range(S):
        if px[x] == 0.0:
            continue
        for z in range(A):
            for yh in range(S):
                joint = belief[x, z] * P[x, z, yh]
                if joint == 0.0:
                    continue
                marg = math.fsum(belief[x, w] * P[x, w, yh] for w in range(A))
                total.append(px[x] * joint * math.log(joint / (belief[x, z] * marg)))
    return math.fsum(total)


# -------------------------
# Belief and CMI
# -------------------------
def test_belief_of_uniform_idm():
    inst = random_instance(1, num_states=4, num_actions=3, n=3)
    b = bounds.empirical_belief(uniform_model(Role.IDM, 4, 3), inst.dataset)
    seen = np.unique(inst.dataset.sources)
    np.testing.assert_allclose(b[seen], 1.0 / 3, atol=1e-15)
    unseen = [x for x in range(4) if x not in seen]
    assert all(np.isnan(b[x]).all() for x in unseen)


def test_belief_single_pair_and_hand_average():
    inst = random_instance(2, num_states=3, num_actions=2)
    ds = make_dataset(inst.dataset.spec, [[1, 2]])
    b = bounds.empirical_belief(inst.idm, ds)
    np.testing.assert_array_equal(b[1], inst.idm.probabilities((1, 2)))

    logits = np.zeros((3, 3, 2))
    logits[0, 0] = [40.0, -40.0]
    logits[0, 1] = [-40.0, 40.0]
    idm = ConditionalCategorical(role=Role.IDM, logits=logits)
    b = bounds.empirical_belief(idm, make_dataset(inst.dataset.spec, [[0, 0], [0, 1]]))
    np.testing.assert_allclose(b[0], [0.5, 0.5], atol=1e-15)


def test_cmi_zero_when_fwm_ignores_action():
    inst = random_instance(3)
    assert bounds.exact_cmi(_flat_fwm(inst.fwm), inst.idm, inst.dataset) == pytest.approx(0.0, abs=1e-12)


def test_cmi_of_invertible_channel_is_log_a():
    _, fwm, ds = _invertible_world()
    belief = np.full((4, 4), 0.25)
    assert bounds.exact_cmi(fwm, uniform_model(Role.IDM, 4, 4), ds, belief=belief) == pytest.approx(math.log(4), abs=1e-9)


@pytest.mark.parametrize("seed", [4, 5, 6])
def test_cmi_matches_enumeration(seed):
    inst = random_instance(seed, num_states=4, num_actions=3)
    belief = bounds.empirical_belief(inst.idm, inst.dataset)
    px = inst.dataset.source_distribution()
    expected = _cmi_by_enumeration(inst.fwm, np.nan_to_num(belief), px)
    assert bounds.exact_cmi(inst.fwm, inst.idm, inst.dataset) == pytest.approx(expected, abs=1e-10)


def test_exact_cmi_invariant_under_action_relabelling():
    for seed in range(20):
        inst = random_instance(seed)
        perm = rng_stream(seed, "test/relabel").permutation(inst.fwm.num_actions)
        fwm = inst.fwm.with_logits(inst.fwm.logits[:, perm, :])
        idm = inst.idm.with_logits(inst.idm.logits[:, :, perm])
        before = bounds.exact_cmi(inst.fwm, inst.idm, inst.dataset)
        assert bounds.exact_cmi(fwm, idm, inst.dataset) == pytest.approx(before, abs=1e-12), seed
        bound = bounds.variational_cmi_bound(inst.fwm, inst.idm, inst.dataset)
        assert bounds.variational_cmi_bound(fwm, idm, inst.dataset) == pytest.approx(bound, abs=1e-12), seed


def test_cmi_bound_zero_for_flat_fwm_and_uniform_idm():
    inst = random_instance(7)
    S, A = inst.fwm.num_states, inst.fwm.num_actions
    value = bounds.variational_cmi_bound(_flat_fwm(inst.fwm), uniform_model(Role.IDM, S, A), inst.dataset)
    assert value == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_cmi_bound_below_exact_and_tight_at_joint_posterior(seed):
    inst = random_instance(seed)
    fwm, idm, ds = inst.fwm, inst.idm, inst.dataset
    assert bounds.variational_cmi_bound(fwm, idm, ds) <= bounds.exact_cmi(fwm, idm, ds) + 1e-9

    belief = bounds.empirical_belief(idm, ds)
    q_star = bounds.joint_posterior(fwm, belief)
    tight = bounds.variational_cmi_bound(fwm, q_star, ds, belief=belief)
    assert tight == pytest.approx(bounds.exact_cmi(fwm, q_star, ds, belief=belief), abs=1e-9)


def test_joint_posterior_rejects_transition_shaped_belief():
    inst = random_instance(8, num_states=3, num_actions=2)
    with pytest.raises(ValueError):
        bounds.joint_posterior(inst.fwm, np.full((3, 3, 2), 0.5))


# -------------------------
# Likelihood and ELBO
# -------------------------
def test_marginal_loglik_uniform_fwm():
    inst = random_instance(9, num_states=5, num_actions=3)
    fwm = uniform_model(Role.FWM, 5, 3)
    assert bounds.marginal_loglik(fwm, inst.reference, inst.dataset) == pytest.approx(-math.log(5), abs=1e-12)
    assert bounds.marginal_loglik(fwm, np.full((5, 3), 1 / 3), inst.dataset) == pytest.approx(-math.log(5), abs=1e-12)


def test_marginal_loglik_one_hot_prior():
    inst = random_instance(10, num_states=3, num_actions=2)
    ds = make_dataset(inst.dataset.spec, [[2, 1]])
    prior = np.zeros((3, 2))
    prior[:, 1] = 1.0
    expected = float(inst.fwm.log_probabilities((2, 1))[1])
    assert bounds.marginal_loglik(inst.fwm, prior, ds) == pytest.approx(expected, abs=1e-12)


def test_marginal_loglik_matches_direct_summation():
    inst = random_instance(11)
    fwm, ref, ds = inst.fwm, inst.reference, inst.dataset
    P, R = fwm.probabilities(), ref.prior_table()
    terms = []
    for x, y in ds.pairs.tolist():
        terms.append(math.log(math.fsum(R[x, y, z] * P[x, z, y] for z in range(fwm.num_actions))))
    assert bounds.marginal_loglik(fwm, ref, ds) == pytest.approx(math.fsum(terms) / len(terms), abs=1e-12)


def test_undefined_prior_row_is_an_error():
    inst = random_instance(12, num_states=3, num_actions=2)
    prior = np.full((3, 2), 0.5)
    prior[inst.dataset.sources[0]] = np.nan
    with pytest.raises(ValueError):
        bounds.marginal_loglik(inst.fwm, prior, inst.dataset)
    with pytest.raises(ValueError):
        bounds.transition_prior(np.ones(4), 3, 2)


@pytest.mark.parametrize("seed", range(10))
def test_elbo_gap_is_posterior_kl(seed):
    inst = random_instance(seed)
    fwm, idm, ref, ds = inst.fwm, inst.idm, inst.reference, inst.dataset
    mll = bounds.marginal_loglik(fwm, ref, ds)
    lb = bounds.elbo(fwm, idm, ref, ds)
    assert lb <= mll + 1e-9
    assert mll - lb == pytest.approx(bounds.mean_posterior_kl(fwm, idm, ref, ds), abs=1e-9)


def test_elbo_tight_at_tilted_posterior():
    inst = random_instance(13)
    post = bounds.tilted_posterior(inst.fwm, inst.reference)
    mll = bounds.marginal_loglik(inst.fwm, inst.reference, inst.dataset)
    assert bounds.elbo(inst.fwm, post, inst.reference, inst.dataset) == pytest.approx(mll, abs=1e-9)


def test_elbo_with_idm_equal_to_prior():
    inst = random_instance(14)
    idm = inst.reference.model
    reward_only = bounds.kl_regularised_objective(inst.fwm, idm, inst.reference, inst.dataset, beta=0.0)
    assert bounds.elbo(inst.fwm, idm, inst.reference, inst.dataset) == pytest.approx(reward_only, abs=1e-12)


def test_snapshot_metrics_columns():
    inst = random_instance(15)
    m = bounds.snapshot_metrics(inst.fwm, inst.idm, inst.reference, inst.dataset)
    assert set(m) == {"exact_cmi", "cmi_bound", "marginal_loglik", "elbo", "elbo_gap"}
    assert m["elbo_gap"] == m["marginal_loglik"] - m["elbo"]


def test_snapshot_likelihood_uses_reference_row_as_prior():
    inst = random_instance(16)
    S, A = inst.fwm.num_states, inst.fwm.num_actions
    m = bounds.snapshot_metrics(inst.fwm, inst.idm, inst.reference, inst.dataset)
    by_row = bounds.marginal_loglik(inst.fwm, inst.reference.model.probabilities(), inst.dataset)
    assert m["marginal_loglik"] == pytest.approx(by_row, abs=1e-12)
    per_state = bounds.marginal_loglik(inst.fwm, np.full((S, A), 1.0 / A), inst.dataset)
    assert abs(m["marginal_loglik"] - per_state) > 1e-9


# -------------------------
# Posterior
# -------------------------
def test_posterior_of_invertible_fwm_is_one_hot():
    kernel, fwm, _ = _invertible_world()
    prior = np.full((4, 4), 0.25)
    post = bounds.posterior_exact(fwm, prior, 1, 3)
    assert int(np.argmax(post)) == 2
    assert post[2] == pytest.approx(1.0, abs=1e-12)


def test_posterior_equals_prior_when_fwm_ignores_action():
    inst = random_instance(16, num_states=4, num_actions=3)
    post = bounds.posterior_exact(_flat_fwm(inst.fwm), inst.reference, 2, 0)
    np.testing.assert_allclose(post, inst.reference.prior_table()[2, 0], atol=1e-12)


def test_posterior_zero_evidence():
    logits = np.zeros((3, 2, 3))
    logits[:, :, 1] = -1000.0
    fwm = ConditionalCategorical(role=Role.FWM, logits=logits)
    with pytest.raises(EvidenceError):
        bounds.posterior_exact(fwm, np.full((3, 2), 0.5), 0, 1)


def test_tilted_posterior_rows_are_distributions():
    inst = random_instance(17)
    post = bounds.tilted_posterior(inst.fwm, inst.reference)
    assert post.role == Role.IDM
    assert np.max(np.abs(post.probabilities().sum(axis=-1) - 1.0)) <= 1e-12
    x, y = (int(v) for v in inst.dataset.pairs[0])
    np.testing.assert_allclose(
        post.probabilities((x, y)), bounds.posterior_exact(inst.fwm, inst.reference, x, y), atol=1e-12
    )


# -------------------------
# Accuracy
# -------------------------
def test_kernel_exact_models_score_one():
    kernel, fwm, ds = _invertible_world(S=5, A=3)
    assert fwm_accuracy(fwm, kernel, ds) == 1.0
    post = bounds.tilted_posterior(fwm, np.full((5, 3), 1 / 3))
    assert idm_accuracy(post, kernel, ds) == 1.0
    assert dynamics_accuracy(post, kernel, ds) == 1.0


def test_uniform_fwm_predicts_state_zero():
    spec = WorldSpec(world_kind="shift_noise", num_states=4, num_actions=2, noise=0.1, seed=2)
    kernel = build_kernel(spec)
    ds = sample_dataset(kernel, uniform_prior(2), 100, seed=5)
    contexts = np.unique(np.stack([ds.sources, ds.reveal_hidden_actions()], axis=1), axis=0)
    expected = float(np.mean((contexts[:, 0] + contexts[:, 1]) % 4 == 0))
    assert fwm_accuracy(uniform_model(Role.FWM, 4, 2), kernel, ds) == pytest.approx(expected)


def test_idm_accuracy_accepts_indistinguishable_actions():
    # in the corner of a noiseless 2x2 grid, "up" and "left" both stay put
    spec = WorldSpec(world_kind="slip_grid", num_states=4, num_actions=4, grid_rows=2, grid_cols=2, noise=0.0)
    kernel = build_kernel(spec)
    ds = make_dataset(spec, [[0, 0]], hidden=[0])
    logits = np.zeros((4, 4, 4))
    logits[0, 0] = [0.0, 0.0, 5.0, 0.0]
    assert idm_accuracy(ConditionalCategorical(role=Role.IDM, logits=logits), kernel, ds) == 1.0
    logits[0, 0] = [0.0, 5.0, 0.0, 0.0]
    assert idm_accuracy(ConditionalCategorical(role=Role.IDM, logits=logits), kernel, ds) == 0.0


# -------------------------
# Records and reports
# -------------------------
def _trace():
    return TrainingTrace(
        [
            MetricsRecord(iteration=0, phase=0, step=0, marginal_loglik=-1.25, elbo=-1.5, elbo_gap=0.25),
            MetricsRecord(iteration=1, phase=1, step=0, objective=-0.7, reward_mean=-0.7, reward_std=0.1),
            MetricsRecord(
                iteration=1, phase=1, step=1, objective=-0.6, reward_mean=-0.6, reward_std=0.1,
                marginal_loglik=-1.2, elbo=-1.4, elbo_gap=0.2, fwm_accuracy=0.5,
            ),
            MetricsRecord(
                iteration=1, phase=2, step=0, objective=-0.9, reward_mean=-0.8, reward_std=0.3,
                mean_kl_to_ref=1.0 / 3.0, marginal_loglik=-1.1, elbo=-1.15, elbo_gap=0.05, idm_accuracy=0.75,
            ),
        ]
    )


def test_record_row_round_trip():
    rec = _trace()[3]
    row = rec.to_row()
    assert row[:3] == ["1", "2", "0"]
    assert row[METRICS_COLUMNS.index("exact_cmi")] == ""
    assert row[METRICS_COLUMNS.index("mean_kl_to_ref")] == repr(1.0 / 3.0)
    assert MetricsRecord.from_row(dict(zip(METRICS_COLUMNS, row))) == rec


def test_trace_rejects_out_of_order_keys():
    trace = _trace()
    with pytest.raises(ValueError):
        trace.append(MetricsRecord(iteration=1, phase=1, step=5))
    assert [r.key for r in trace.boundaries()] == [(0, 0, 0), (1, 1, 1), (1, 2, 0)]


def _write_metrics(tmp_path, trace):
    store = RunStore(tmp_path)
    store.open_metrics()
    with store:
        for r in trace:
            store.on_record(r)
    return store.metrics_path


def test_load_trace_round_trips_through_csv(tmp_path):
    trace = _trace()
    path = _write_metrics(tmp_path, trace)
    df = load_trace(path)
    assert list(df.columns) == list(METRICS_COLUMNS)
    assert frame_to_trace(df) == trace
    frame = trace_frame(trace)
    assert len(frame) == len(df) == 4
    assert frame["elbo"].tolist()[0] == df["elbo"].tolist()[0] == -1.5


def test_load_trace_checks_version_tag(tmp_path):
    path = tmp_path / "metrics.csv"
    path.write_text("# swirl-metrics-v0\n" + ",".join(METRICS_COLUMNS) + "\n")
    with pytest.raises(ValueError, match="version tag"):
        load_trace(path)
    with pytest.raises(FileNotFoundError):
        load_trace(tmp_path / "missing.csv")


def test_phase_summary(tmp_path):
    df = load_trace(_write_metrics(tmp_path, _trace()))
    summary = phase_summary(df)
    assert list(summary.index) == [(0, 0), (1, 1), (1, 2)]
    row = summary.loc[(1, 1)]
    assert row["steps"] == 2
    assert row["objective_first"] == -0.7 and row["objective_last"] == -0.6
    assert row["elbo"] == -1.4 and row["fwm_accuracy"] == 0.5
    assert phase_summary(df.iloc[0:0]).empty


def test_tables_render():
    assert "elbo" in metrics_table({"elbo": -1.5, "marginal_loglik": -1.25})
    m = init_policy(Role.IDM, (2, 2), RandomInit(), seed=1)
    table = distribution_table(m, [(0, 1), (1, 0)])
    lines = table.splitlines()
    assert "z=0" in lines[0] and "z=1" in lines[0]
    assert len(lines) == 4
