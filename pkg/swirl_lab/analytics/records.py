from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from ..utils import format_float, parse_float

METRICS_VERSION = "swirl-metrics-v1"

METRICS_COLUMNS = (
    "iteration",
    "phase",
    "step",
    "objective",
    "reward_mean",
    "reward_std",
    "mean_kl_to_ref",
    "exact_cmi",
    "cmi_bound",
    "marginal_loglik",
    "elbo",
    "elbo_gap",
    "fwm_accuracy",
    "idm_accuracy",
)

KEY_COLUMNS = ("iteration", "phase", "step")


class MetricsRecord(BaseModel):
    """One row of the training trace. Analysis columns stay None between emit points.

    marginal_loglik, elbo and elbo_gap use the iteration's snapshot IDM row
    pi_ref(z|x,y) as the action prior, so marginal_loglik is not log P_theta(y|x)
    under a per-state prior P(z|x).
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    # -------------------------
    # Key
    # -------------------------
    iteration: int = Field(ge=0)
    phase: int = Field(ge=0, le=2, description="0 = initial snapshot, 1 = FWM phase, 2 = IDM phase.")
    step: int = Field(ge=0)

    # -------------------------
    # Step statistics
    # -------------------------
    objective: Optional[float] = None
    reward_mean: Optional[float] = None
    reward_std: Optional[float] = None
    mean_kl_to_ref: Optional[float] = None

    # -------------------------
    # Exact analysis (phase boundaries / emit points)
    # -------------------------
    exact_cmi: Optional[float] = None
    cmi_bound: Optional[float] = None
    marginal_loglik: Optional[float] = None
    elbo: Optional[float] = None
    elbo_gap: Optional[float] = None
    fwm_accuracy: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    idm_accuracy: Optional[float] = Field(default=None, ge=0.0, le=1.0)

    @property
    def key(self) -> Tuple[int, int, int]:
        return (self.iteration, self.phase, self.step)

    def to_row(self) -> List[str]:
        row = []
        for col in METRICS_COLUMNS:
            v = getattr(self, col)
            row.append(str(v) if col in KEY_COLUMNS else format_float(v))
        return row

    @classmethod
    def from_row(cls, row: Dict[str, str]) -> "MetricsRecord":
        data = {}
        for col in METRICS_COLUMNS:
            cell = row.get(col, "")
            data[col] = int(cell) if col in KEY_COLUMNS else parse_float(cell)
        return cls(**data)


class TrainingTrace:
    """Ordered MetricsRecords with strictly increasing (iteration, phase, step) keys."""

    def __init__(self, records: Optional[List[MetricsRecord]] = None):
        self._records: List[MetricsRecord] = []
        for r in records or []:
            self.append(r)

    def append(self, record: MetricsRecord) -> None:
        if self._records and record.key <= self._records[-1].key:
            raise ValueError(f"trace key {record.key} does not follow {self._records[-1].key}")
        self._records.append(record)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[MetricsRecord]:
        return iter(self._records)

    def __getitem__(self, i: int) -> MetricsRecord:
        return self._records[i]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TrainingTrace) and self._records == other._records

    @property
    def last(self) -> Optional[MetricsRecord]:
        return self._records[-1] if self._records else None

    def boundaries(self) -> List[MetricsRecord]:
        """Records that carry full analysis metrics."""
        return [r for r in self._records if r.marginal_loglik is not None]
