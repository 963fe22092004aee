import os
import sys
from pathlib import Path

import hypothesis
import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from swirl_lab.models.policy import ConditionalCategorical, Role  # noqa: E402
from swirl_lab.worlds.dataset import TransitionDataset, uniform_prior  # noqa: E402
from swirl_lab.worlds.spec import WorldSpec  # noqa: E402

np.seterr(all="warn")

hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "ci"))

FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def make_dataset(spec: WorldSpec, pairs, hidden=None) -> TransitionDataset:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    hidden = np.zeros(len(pairs), dtype=np.int64) if hidden is None else np.asarray(hidden)
    return TransitionDataset(
        spec=spec,
        pairs=pairs,
        action_prior=uniform_prior(spec.num_actions),
        _hidden_actions=hidden,
    )


def uniform_model(role: Role, num_states: int, num_actions: int, frozen: bool = False) -> ConditionalCategorical:
    shape = (num_states, num_actions, num_states) if role == Role.FWM else (num_states, num_states, num_actions)
    return ConditionalCategorical(role=role, logits=np.zeros(shape), frozen=frozen)
