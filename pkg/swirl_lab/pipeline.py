from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

from .analytics import bounds
from .analytics.accuracy import fwm_accuracy, idm_accuracy
from .analytics.records import TrainingTrace
from .config import RunConfig
from .errors import CheckpointError
from .models.init import init_policy
from .models.policy import ConditionalCategorical, Role
from .settings import Settings
from .store import RunStore
from .training.swirl import run
from .utils import json_dumps, sha256_text
from .worlds.dataset import (
    LabelledSubset,
    TransitionDataset,
    load_dataset,
    sample_dataset,
    save_dataset,
    split_labelled,
)
from .worlds.kernels import TransitionKernel, build_kernel, kernel_summary

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------
def config_digest(cfg: RunConfig) -> str:
    return sha256_text(json_dumps(cfg.model_dump(mode="json")))


def _store_for(cfg: RunConfig, settings: Settings) -> RunStore:
    return RunStore(settings.resolve_output(cfg.output_dir), provenance={"config_sha256": config_digest(cfg)})


def make_evaluator(
    kernel: TransitionKernel,
    dataset: TransitionDataset,
) -> Callable[[ConditionalCategorical, ConditionalCategorical], Dict[str, float]]:
    """Accuracy hook for the training loop; the only place that pairs models with hidden actions."""

    def evaluate(fwm: ConditionalCategorical, idm: ConditionalCategorical) -> Dict[str, float]:
        return {
            "fwm_accuracy": fwm_accuracy(fwm, kernel, dataset),
            "idm_accuracy": idm_accuracy(idm, kernel, dataset),
        }

    return evaluate


# ---------------------------------------------------------------------
# World and data
# ---------------------------------------------------------------------
def gen_world(cfg: RunConfig) -> Tuple[TransitionKernel, Dict[str, object]]:
    kernel = build_kernel(cfg.world)
    return kernel, kernel_summary(kernel)


def gen_data(cfg: RunConfig, settings: Settings, out: Optional[Path] = None) -> Tuple[TransitionDataset, Path]:
    kernel = build_kernel(cfg.world)
    ds = sample_dataset(kernel, cfg.dataset.prior_vector(cfg.world.num_actions), cfg.dataset.n, cfg.dataset.seed)
    path = out if out is not None else _store_for(cfg, settings).dataset_path
    save_dataset(path, ds)
    logger.info("wrote %d records to %s", len(ds), path)
    return ds, path


def prepare_data(cfg: RunConfig) -> Tuple[TransitionKernel, TransitionDataset, LabelledSubset, TransitionDataset]:
    kernel = build_kernel(cfg.world)
    full = sample_dataset(kernel, cfg.dataset.prior_vector(cfg.world.num_actions), cfg.dataset.n, cfg.dataset.seed)
    labelled, train_ds = split_labelled(full, cfg.dataset.labelled_fraction)
    return kernel, full, labelled, train_ds


def initial_policies(
    cfg: RunConfig,
    kernel: TransitionKernel,
    labelled: LabelledSubset,
) -> Tuple[ConditionalCategorical, ConditionalCategorical]:
    dims = (cfg.world.num_states, cfg.world.num_actions)
    fwm = init_policy(Role.FWM, dims, cfg.init.fwm, cfg.init.seed, kernel=kernel, labelled=labelled)
    idm = init_policy(Role.IDM, dims, cfg.init.idm, cfg.init.seed, kernel=kernel, labelled=labelled)
    return fwm, idm


# ---------------------------------------------------------------------
# Train / evaluate
# ---------------------------------------------------------------------
@dataclass(frozen=True)
class TrainResult:
    fwm: ConditionalCategorical
    idm: ConditionalCategorical
    trace: TrainingTrace
    output_dir: Path


def train(cfg: RunConfig, settings: Settings, resume: bool = False) -> TrainResult:
    store = _store_for(cfg, settings)
    store.init_dirs()
    kernel = build_kernel(cfg.world)

    if resume:
        latest = store.latest_checkpoint()
        if latest is None:
            raise CheckpointError(f"no checkpoint to resume from in {store.checkpoints_root}")
        iteration, phase, d = latest
        fwm, idm, _ = RunStore.load_phase(d)
        train_ds = load_dataset(store.train_path, kernel)
        start = iteration + 1
        logger.info("resuming after iteration %d phase %d from %s", iteration, phase, d)
    else:
        kernel, full, labelled, train_ds = prepare_data(cfg)
        save_dataset(store.dataset_path, full)
        save_dataset(store.train_path, train_ds)
        fwm, idm = initial_policies(cfg, kernel, labelled)
        start = 1
        logger.info(
            "training on %d unlabelled pairs (%d labelled for warm-up), output %s",
            len(train_ds),
            len(labelled),
            store.root,
        )

    with store:
        store.open_metrics(append=resume)
        fwm, idm, trace = run(
            cfg.swirl,
            train_ds,
            fwm,
            idm,
            emit_every=cfg.emit_every,
            evaluator=make_evaluator(kernel, train_ds),
            observer=store,
            start_iteration=start,
        )
    return TrainResult(fwm=fwm, idm=idm, trace=trace, output_dir=store.root)


def evaluate(cfg: RunConfig, settings: Settings, checkpoint_dir: Optional[Path] = None) -> Dict[str, float]:
    """Analysis metrics and accuracies of a saved phase checkpoint (latest by default) on the training pairs."""
    store = _store_for(cfg, settings)
    if checkpoint_dir is None:
        latest = store.latest_checkpoint()
        if latest is None:
            raise CheckpointError(f"no checkpoints in {store.checkpoints_root}")
        checkpoint_dir = latest[2]
    kernel = build_kernel(cfg.world)
    train_ds = load_dataset(store.train_path, kernel)
    fwm, idm, reference = RunStore.load_phase(checkpoint_dir)
    if fwm.logits.shape != (kernel.num_states, kernel.num_actions, kernel.num_states):
        raise CheckpointError(f"{checkpoint_dir}: checkpoint dims do not match the configured world")
    metrics = bounds.snapshot_metrics(fwm, idm, reference, train_ds)
    metrics.update(make_evaluator(kernel, train_ds)(fwm, idm))
    return metrics
