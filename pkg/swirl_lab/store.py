from __future__ import annotations

import csv
import logging
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, TextIO, Tuple

from .analytics.records import METRICS_COLUMNS, METRICS_VERSION, MetricsRecord
from .models.checkpoint import read_checkpoint, write_checkpoint
from .models.policy import ConditionalCategorical, ReferencePolicy, Role
from .utils import now_iso

logger = logging.getLogger(__name__)

CHECKPOINT_SUFFIX = ".swirl1"
_PHASE_DIR_RE = re.compile(r"^iter(\d{3,})_phase([12])$")


class RunStore:
    """Files of one training run under `output_dir`.

    metrics.csv                       one row per MetricsRecord, streamed
    dataset.tsv / train.tsv           full sample and its unlabelled training part
    checkpoints/iterNNN_phaseP/       fwm, idm and reference at each phase end
    """

    def __init__(self, output_dir: Path, provenance: Optional[Dict[str, Any]] = None):
        self.root = Path(output_dir)
        self.provenance = dict(provenance or {})
        self._metrics: Optional[TextIO] = None
        self._writer: Any = None

    @property
    def metrics_path(self) -> Path:
        return self.root / "metrics.csv"

    @property
    def dataset_path(self) -> Path:
        return self.root / "dataset.tsv"

    @property
    def train_path(self) -> Path:
        return self.root / "train.tsv"

    @property
    def checkpoints_root(self) -> Path:
        return self.root / "checkpoints"

    def init_dirs(self) -> None:
        self.checkpoints_root.mkdir(parents=True, exist_ok=True)

    # ------------------------------------------------------------------
    # Metrics
    # ------------------------------------------------------------------
    def open_metrics(self, append: bool = False) -> None:
        self.init_dirs()
        if append and self.metrics_path.exists():
            self._metrics = self.metrics_path.open("a", encoding="utf-8", newline="")
            self._writer = csv.writer(self._metrics, lineterminator="\n")
            return
        self._metrics = self.metrics_path.open("w", encoding="utf-8", newline="")
        # the timestamp line is the only part of the file that differs between identical runs
        self._metrics.write(f"# {METRICS_VERSION} created_at={now_iso()}\n")
        self._writer = csv.writer(self._metrics, lineterminator="\n")
        self._writer.writerow(METRICS_COLUMNS)
        self._metrics.flush()

    def close(self) -> None:
        if self._metrics is not None:
            self._metrics.close()
            self._metrics = None
            self._writer = None

    def __enter__(self) -> "RunStore":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    def on_record(self, record: MetricsRecord) -> None:
        if self._writer is None:
            raise RuntimeError("metrics file is not open")
        self._writer.writerow(record.to_row())
        self._metrics.flush()

    # ------------------------------------------------------------------
    # Checkpoints
    # ------------------------------------------------------------------
    def phase_dir(self, iteration: int, phase: int) -> Path:
        return self.checkpoints_root / f"iter{iteration:03d}_phase{phase}"

    def on_phase_end(
        self,
        iteration: int,
        phase: int,
        fwm: ConditionalCategorical,
        idm: ConditionalCategorical,
        reference: ReferencePolicy,
    ) -> None:
        d = self.phase_dir(iteration, phase)
        meta = {**self.provenance, "iteration": iteration, "phase": phase}
        write_checkpoint(d / f"fwm{CHECKPOINT_SUFFIX}", fwm, meta)
        write_checkpoint(d / f"idm{CHECKPOINT_SUFFIX}", idm, meta)
        write_checkpoint(d / f"reference{CHECKPOINT_SUFFIX}", reference.model, {**meta, "reference_iteration": reference.iteration})
        logger.info("checkpoint written: %s", d)

    def list_checkpoints(self) -> List[Tuple[int, int, Path]]:
        if not self.checkpoints_root.exists():
            return []
        found = []
        for d in self.checkpoints_root.iterdir():
            m = _PHASE_DIR_RE.match(d.name)
            if m and d.is_dir():
                found.append((int(m.group(1)), int(m.group(2)), d))
        return sorted(found)

    def latest_checkpoint(self) -> Optional[Tuple[int, int, Path]]:
        found = self.list_checkpoints()
        return found[-1] if found else None

    @staticmethod
    def load_phase(d: Path) -> Tuple[ConditionalCategorical, ConditionalCategorical, ReferencePolicy]:
        fwm, _ = read_checkpoint(d / f"fwm{CHECKPOINT_SUFFIX}", expected_role=Role.FWM)
        idm, _ = read_checkpoint(d / f"idm{CHECKPOINT_SUFFIX}", expected_role=Role.IDM)
        ref_model, side = read_checkpoint(d / f"reference{CHECKPOINT_SUFFIX}", expected_role=Role.IDM)
        reference = ReferencePolicy.snapshot(ref_model, iteration=int(side.get("reference_iteration", 0)))
        return fwm, idm, reference
