import numpy as np
import pytest
from hypothesis import given, strategies as st
from pydantic import ValidationError

from swirl_lab.errors import DatasetError, WorldSpecError
from swirl_lab.worlds.dataset import (
    FORMAT_TAG,
    load_dataset,
    sample_dataset,
    save_dataset,
    split_labelled,
    uniform_prior,
    validate_prior,
)
from swirl_lab.worlds.kernels import build_kernel, enumerate_contexts, grid_step, kernel_summary
from swirl_lab.worlds.spec import WorldKind, WorldSpec, validate_world_dims


def _spec(kind="permutation", S=4, A=2, **kw):
    return WorldSpec(world_kind=kind, num_states=S, num_actions=A, **kw)


# -------------------------
# WorldSpec
# -------------------------
def test_spec_rejects_single_action():
    with pytest.raises(ValidationError):
        _spec(S=3, A=1)


def test_slip_grid_needs_four_actions_and_matching_grid():
    with pytest.raises(WorldSpecError):
        validate_world_dims(WorldKind.SLIP_GRID, 6, 3, 0.1, 2, 3)
    with pytest.raises(WorldSpecError):
        validate_world_dims(WorldKind.SLIP_GRID, 6, 4, 0.1, 2, 2)
    with pytest.raises(ValidationError):
        _spec("slip_grid", S=6, A=4, grid_rows=2, grid_cols=2)


def test_shift_noise_rejects_more_actions_than_states():
    with pytest.raises(ValidationError):
        _spec("shift_noise", S=3, A=4)


def test_dimension_boundaries_that_are_allowed():
    assert _spec("shift_noise", S=3, A=3).num_actions == 3
    assert _spec("permutation", S=2, A=5).num_actions == 5
    assert _spec("slip_grid", S=6, A=4, grid_rows=2, grid_cols=3).num_states == 6


def test_noise_must_be_below_one():
    with pytest.raises(ValidationError):
        _spec("shift_noise", S=4, A=2, noise=1.0)


# -------------------------
# Kernels
# -------------------------
def test_noiseless_shift_is_deterministic():
    k = build_kernel(_spec("shift_noise", S=4, A=2, noise=0.0))
    for x in range(4):
        for z in range(2):
            expected = np.zeros(4)
            expected[(x + z) % 4] = 1.0
            np.testing.assert_array_equal(k.table[x, z], expected)
    assert k.is_deterministic()


def test_noisy_shift_entries():
    k = build_kernel(_spec("shift_noise", S=4, A=2, noise=0.3))
    row = k.table[1, 1]
    assert row[2] == pytest.approx(0.7, abs=1e-12)
    for y in (0, 1, 3):
        assert row[y] == pytest.approx(0.1, abs=1e-12)


@given(st.integers(2, 9), st.integers(2, 5), st.integers(0, 2**32))
def test_permutation_rows_are_bijections(S, A, seed):
    k = build_kernel(_spec(S=S, A=A, seed=seed))
    assert np.all(k.table.max(axis=-1) == 1.0)
    for z in range(A):
        targets = k.table[:, z, :].argmax(axis=-1)
        assert sorted(targets.tolist()) == list(range(S))


@given(
    st.sampled_from(["permutation", "shift_noise", "slip_grid"]),
    st.floats(0.0, 0.95),
    st.integers(0, 2**40),
)
def test_rows_sum_to_one(kind, noise, seed):
    if kind == "slip_grid":
        spec = _spec(kind, S=6, A=4, grid_rows=2, grid_cols=3, noise=noise, seed=seed)
    else:
        spec = _spec(kind, S=5, A=3, noise=noise, seed=seed)
    t = build_kernel(spec).table
    assert np.max(np.abs(t.sum(axis=-1) - 1.0)) <= 1e-12
    assert t.min() >= 0.0 and t.max() <= 1.0


def test_kernel_is_deterministic_in_seed():
    a = build_kernel(_spec(S=6, A=3, seed=42))
    b = build_kernel(_spec(S=6, A=3, seed=42))
    np.testing.assert_array_equal(a.table, b.table)


def test_slip_grid_clamps_at_walls():
    spec = _spec("slip_grid", S=4, A=4, grid_rows=2, grid_cols=2, noise=0.3)
    # corner 0: up and left both stay put
    assert grid_step(spec, 0, 0) == 0
    assert grid_step(spec, 0, 2) == 0
    assert grid_step(spec, 0, 1) == 2
    assert grid_step(spec, 0, 3) == 1
    t = build_kernel(spec).table
    # intended "up" stays (0.7) plus slip from "left" (0.1)
    assert t[0, 0, 0] == pytest.approx(0.8)
    assert t[0, 0, 2] == pytest.approx(0.1)
    assert t[0, 0, 1] == pytest.approx(0.1)


def test_enumerate_contexts_row_major():
    fwm, idm = enumerate_contexts(build_kernel(_spec(S=2, A=2)))
    assert fwm == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert idm == [(0, 0), (0, 1), (1, 0), (1, 1)]
    fwm, idm = enumerate_contexts(build_kernel(_spec("shift_noise", S=3, A=2)))
    assert len(fwm) == 6 and len(set(fwm)) == 6
    assert len(idm) == 9 and len(set(idm)) == 9


def test_kernel_summary_reports_ambiguity():
    spec = _spec("slip_grid", S=4, A=4, grid_rows=2, grid_cols=2, noise=0.0)
    summary = kernel_summary(build_kernel(spec))
    assert summary["deterministic_rows"] == 1.0
    assert summary["mean_row_entropy"] == 0.0
    # every corner has two wall moves that stay in place
    assert summary["ambiguity_rate"] > 0.0


# -------------------------
# Datasets
# -------------------------
def test_sample_dataset_rejects_empty_request():
    k = build_kernel(_spec())
    with pytest.raises(DatasetError):
        sample_dataset(k, uniform_prior(2), 0, seed=1)


@pytest.mark.parametrize("prior", [[0.5, 0.6], [-0.1, 1.1], [1.0]])
def test_invalid_priors(prior):
    with pytest.raises(DatasetError):
        validate_prior(prior, 2)


def test_permutation_pairs_are_consistent():
    k = build_kernel(_spec(S=6, A=3, seed=9))
    ds = sample_dataset(k, uniform_prior(3), 500, seed=4)
    z = ds.reveal_hidden_actions()
    assert np.all(k.table[ds.sources, z, ds.targets] == 1.0)


def test_sampling_is_bit_identical():
    k = build_kernel(_spec("shift_noise", S=5, A=3, noise=0.2, seed=1))
    a = sample_dataset(k, [0.2, 0.3, 0.5], 300, seed=77)
    b = sample_dataset(k, [0.2, 0.3, 0.5], 300, seed=77)
    np.testing.assert_array_equal(a.pairs, b.pairs)
    np.testing.assert_array_equal(a.reveal_hidden_actions(), b.reveal_hidden_actions())


@pytest.mark.slow
def test_empirical_frequencies_match_kernel():
    k = build_kernel(_spec("shift_noise", S=4, A=2, noise=0.3, seed=0))
    ds = sample_dataset(k, uniform_prior(2), 10**5, seed=123)
    x, y, z = ds.sources, ds.targets, ds.reveal_hidden_actions()
    assert np.mean(y == (x + z) % 4) == pytest.approx(0.7, abs=0.01)

    counts = np.zeros((4, 2, 4))
    np.add.at(counts, (x, z, y), 1.0)
    freqs = counts / counts.sum(axis=-1, keepdims=True)
    assert np.max(np.abs(freqs - k.table)) < 0.02


def test_split_labelled_takes_leading_records():
    k = build_kernel(_spec(S=4, A=2, seed=3))
    ds = sample_dataset(k, uniform_prior(2), 11, seed=5)
    labelled, rest = split_labelled(ds, 0.5)
    assert len(labelled) == 5 and len(rest) == 6
    np.testing.assert_array_equal(labelled.actions, ds.reveal_hidden_actions()[:5])
    np.testing.assert_array_equal(rest.pairs, ds.pairs[5:])
    with pytest.raises(DatasetError):
        split_labelled(ds, 1.0)


def test_dataset_file_round_trip(tmp_path):
    k = build_kernel(_spec("shift_noise", S=4, A=2, noise=0.1, seed=2))
    ds = sample_dataset(k, [0.25, 0.75], 50, seed=8)
    path = tmp_path / "d.tsv"
    save_dataset(path, ds)
    assert path.read_text().splitlines()[0] == f"# format: {FORMAT_TAG}"
    back = load_dataset(path)
    np.testing.assert_array_equal(back.pairs, ds.pairs)
    np.testing.assert_array_equal(back.reveal_hidden_actions(), ds.reveal_hidden_actions())
    np.testing.assert_array_equal(back.action_prior, ds.action_prior)
    assert back.spec == ds.spec


def test_load_fixture_dataset(fixtures_dir):
    ds = load_dataset(fixtures_dir / "tiny_dataset.tsv")
    assert len(ds) == 4
    assert ds.spec.world_kind == WorldKind.SHIFT_NOISE


def test_load_rejects_wrong_version_tag(tmp_path, fixtures_dir):
    text = (fixtures_dir / "tiny_dataset.tsv").read_text().replace(FORMAT_TAG, "swirl-world-v0")
    path = tmp_path / "old.tsv"
    path.write_text(text)
    with pytest.raises(DatasetError, match="version tag"):
        load_dataset(path)


def test_load_rejects_unsupported_record(tmp_path, fixtures_dir):
    text = (fixtures_dir / "tiny_dataset.tsv").read_text().replace("2\t2\t0", "2\t3\t0")
    path = tmp_path / "bad.tsv"
    path.write_text(text)
    with pytest.raises(DatasetError, match="no kernel support"):
        load_dataset(path)
