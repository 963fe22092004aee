from __future__ import annotations

from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd

from ..models.policy import ConditionalCategorical, Context, Role
from .records import KEY_COLUMNS, METRICS_COLUMNS, METRICS_VERSION, MetricsRecord, TrainingTrace

BOUNDARY_COLUMNS = ("exact_cmi", "cmi_bound", "marginal_loglik", "elbo", "elbo_gap", "fwm_accuracy", "idm_accuracy")


def trace_frame(trace: Iterable[MetricsRecord]) -> pd.DataFrame:
    rows = [r.model_dump() for r in trace]
    return pd.DataFrame(rows, columns=list(METRICS_COLUMNS))


def load_trace(path: Path) -> pd.DataFrame:
    """Read a metrics CSV; empty cells become NaN."""
    if not path.exists():
        raise FileNotFoundError(f"Metrics file not found: {path}")
    with path.open("r", encoding="utf-8") as f:
        first = f.readline()
    tag = first[1:].split()[0] if first.startswith("#") and first[1:].split() else None
    if tag != METRICS_VERSION:
        raise ValueError(f"{path}: version tag {tag!r} does not match {METRICS_VERSION!r}")
    df = pd.read_csv(path, comment="#", dtype={c: "int64" for c in KEY_COLUMNS}, float_precision="round_trip")
    missing = [c for c in METRICS_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    return df[list(METRICS_COLUMNS)]


def frame_to_trace(df: pd.DataFrame) -> TrainingTrace:
    trace = TrainingTrace()
    for row in df.to_dict(orient="records"):
        cells = {k: ("" if pd.isna(v) else repr(float(v)) if k not in KEY_COLUMNS else str(int(v))) for k, v in row.items()}
        trace.append(MetricsRecord.from_row(cells))
    return trace


def phase_summary(df: pd.DataFrame) -> pd.DataFrame:
    """Per (iteration, phase): step count, first/last objective, and the last boundary metrics."""
    if df.empty:
        return pd.DataFrame()
    g = df.groupby(["iteration", "phase"], sort=True)
    out = pd.DataFrame(
        {
            "steps": g["step"].count(),
            "objective_first": g["objective"].first(),
            "objective_last": g["objective"].last(),
            "reward_mean": g["reward_mean"].mean(),
            "mean_kl_to_ref": g["mean_kl_to_ref"].last(),
        }
    )
    for col in BOUNDARY_COLUMNS:
        out[col] = g[col].last()
    return out


# -------------------------
# Human-readable tables
# -------------------------
def metrics_table(metrics: Dict[str, float]) -> str:
    df = pd.DataFrame(list(metrics.items()), columns=["Metric", "Value"]).set_index("Metric")
    return df.to_markdown(floatfmt=".6g")


def summary_table(summary: Dict[str, object]) -> str:
    df = pd.DataFrame([(k, v) for k, v in summary.items()], columns=["Field", "Value"]).set_index("Field")
    return df.to_markdown()


def distribution_table(model: ConditionalCategorical, contexts: Sequence[Context], digits: int = 4) -> str:
    """One row per context, one column per outcome probability."""
    first, second = ("x", "z") if model.role == Role.FWM else ("x", "y")
    outcome = "y" if model.role == Role.FWM else "z"
    rows: List[Tuple] = []
    for ctx in contexts:
        i, j = model.check_context(ctx)
        p = model.probabilities((i, j))
        rows.append((i, j, *np.round(p, digits).tolist()))
    cols = [first, second] + [f"{outcome}={k}" for k in range(model.outcome_dim)]
    return pd.DataFrame(rows, columns=cols).to_markdown(index=False)
