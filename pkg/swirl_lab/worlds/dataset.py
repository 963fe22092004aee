from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import DatasetError
from ..utils import json_dumps, json_loads, rng_stream
from .kernels import TransitionKernel, build_kernel
from .spec import WorldSpec

logger = logging.getLogger(__name__)

FORMAT_TAG = "swirl-world-v1"
PRIOR_TOL = 1e-12


def validate_prior(prior: Sequence[float], num_actions: int) -> np.ndarray:
    p = np.asarray(prior, dtype=np.float64)
    if p.shape != (num_actions,):
        raise DatasetError(f"action prior must have length {num_actions}, got {p.shape}")
    if np.any(p < 0.0) or not np.all(np.isfinite(p)):
        raise DatasetError("action prior has negative or non-finite entries")
    if abs(p.sum() - 1.0) > PRIOR_TOL:
        raise DatasetError(f"action prior must sum to 1, sums to {p.sum()!r}")
    return p


def uniform_prior(num_actions: int) -> np.ndarray:
    return np.full(num_actions, 1.0 / num_actions)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TransitionDataset:
    """State-only transitions (x, y).

    The generating actions are kept for evaluation only and are reachable
    through `reveal_hidden_actions`, which training code never calls.
    """

    spec: WorldSpec
    pairs: np.ndarray  # (n, 2) int64
    action_prior: np.ndarray
    _hidden_actions: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        hidden = np.asarray(self._hidden_actions, dtype=np.int64).reshape(-1)
        if len(pairs) != len(hidden):
            raise DatasetError(f"{len(pairs)} pairs but {len(hidden)} hidden actions")
        S = self.spec.num_states
        if len(pairs) and (pairs.min() < 0 or pairs.max() >= S):
            raise DatasetError("state index out of range")
        prior = validate_prior(self.action_prior, self.spec.num_actions)
        object.__setattr__(self, "pairs", _readonly(pairs))
        object.__setattr__(self, "_hidden_actions", _readonly(hidden))
        object.__setattr__(self, "action_prior", _readonly(prior))

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sources(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def targets(self) -> np.ndarray:
        return self.pairs[:, 1]

    @property
    def num_states(self) -> int:
        return self.spec.num_states

    @property
    def num_actions(self) -> int:
        return self.spec.num_actions

    def source_distribution(self) -> np.ndarray:
        """Empirical P(x) over source states."""
        counts = np.bincount(self.sources, minlength=self.num_states).astype(np.float64)
        return counts / max(len(self), 1)

    def reveal_hidden_actions(self) -> np.ndarray:
        return self._hidden_actions


@dataclass(frozen=True)
class LabelledSubset:
    """Transitions with their actions revealed; used only for warm-up."""

    spec: WorldSpec
    sources: np.ndarray
    targets: np.ndarray
    actions: np.ndarray

    def __len__(self) -> int:
        return len(self.sources)


# ---------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------
def sample_dataset(
    kernel: TransitionKernel,
    action_prior: Sequence[float],
    n: int,
    seed: int,
) -> TransitionDataset:
    if n < 1:
        raise DatasetError(f"n must be >= 1, got {n}")
    S, A = kernel.num_states, kernel.num_actions
    prior = validate_prior(action_prior, A)

    rng = rng_stream(seed, "dataset")
    x = rng.integers(0, S, size=n)
    z = rng.choice(A, size=n, p=prior)
    u = rng.random(n)

    rows = kernel.table[x, z]  # (n, S)
    cdf = np.cumsum(rows, axis=1)
    cdf = cdf / cdf[:, -1:]
    # zero-probability states occupy empty cdf intervals and are never drawn
    y = (cdf <= u[:, None]).sum(axis=1)
    y = np.minimum(y, S - 1)

    ds = TransitionDataset(
        spec=kernel.spec,
        pairs=np.stack([x, y], axis=1),
        action_prior=prior,
        _hidden_actions=z,
    )
    check_support(ds, kernel)
    return ds


def check_support(dataset: TransitionDataset, kernel: TransitionKernel) -> None:
    x, y = dataset.sources, dataset.targets
    z = dataset.reveal_hidden_actions()
    bad = np.flatnonzero(kernel.table[x, z, y] <= 0.0)
    if len(bad):
        raise DatasetError(f"{len(bad)} records have no kernel support, first at index {bad[0]}")


def split_labelled(
    dataset: TransitionDataset,
    fraction: float,
) -> Tuple[LabelledSubset, TransitionDataset]:
    """First floor(n*fraction) records become the labelled warm-up set; the rest stay state-only."""
    if not 0.0 < fraction < 1.0:
        raise DatasetError(f"labelled fraction must lie in (0, 1), got {fraction}")
    k = int(math.floor(len(dataset) * fraction))
    if k < 1 or k >= len(dataset):
        raise DatasetError(f"split of {len(dataset)} records at {fraction} leaves an empty side")
    hidden = dataset.reveal_hidden_actions()
    labelled = LabelledSubset(
        spec=dataset.spec,
        sources=dataset.sources[:k].copy(),
        targets=dataset.targets[:k].copy(),
        actions=hidden[:k].copy(),
    )
    rest = TransitionDataset(
        spec=dataset.spec,
        pairs=dataset.pairs[k:],
        action_prior=dataset.action_prior,
        _hidden_actions=hidden[k:],
    )
    return labelled, rest


# ---------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------
def save_dataset(path: Path, dataset: TransitionDataset) -> None:
    lines = [
        f"# format: {FORMAT_TAG}",
        f"# world: {json_dumps(dataset.spec.model_dump(mode='json'))}",
        f"# action_prior: {json_dumps([float(p) for p in dataset.action_prior])}",
        f"# records: {len(dataset)}",
        "x\ty\tz_hidden",
    ]
    hidden = dataset.reveal_hidden_actions()
    for (x, y), z in zip(dataset.pairs.tolist(), hidden.tolist()):
        lines.append(f"{x}\t{y}\t{z}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(path: Path, kernel: Optional[TransitionKernel] = None) -> TransitionDataset:
    if not path.exists():
        raise FileNotFoundError(f"Dataset not found: {path}")
    header = {}
    records = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if raw.startswith("#"):
            key, _, value = raw[1:].partition(":")
            header[key.strip()] = value.strip()
            continue
        if not raw.strip() or raw.startswith("x\t"):
            continue
        parts = raw.split("\t")
        if len(parts) != 3:
            raise DatasetError(f"{path}:{lineno}: expected 3 tab-separated fields")
        records.append([int(p) for p in parts])

    tag = header.get("format")
    if tag != FORMAT_TAG:
        raise DatasetError(f"{path}: version tag {tag!r} does not match {FORMAT_TAG!r}")
    spec = WorldSpec.model_validate(json_loads(header["world"]))
    prior = json_loads(header["action_prior"])
    expected = int(header.get("records", len(records)))
    if expected != len(records):
        raise DatasetError(f"{path}: header says {expected} records, found {len(records)}")
    if not records:
        raise DatasetError(f"{path}: no records")

    arr = np.asarray(records, dtype=np.int64)
    ds = TransitionDataset(spec=spec, pairs=arr[:, :2], action_prior=prior, _hidden_actions=arr[:, 2])
    check_support(ds, kernel if kernel is not None else build_kernel(spec))
    return ds
