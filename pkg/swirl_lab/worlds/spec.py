from __future__ import annotations

from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..errors import WorldSpecError


class WorldKind(str, Enum):
    PERMUTATION = "permutation"
    SHIFT_NOISE = "shift_noise"
    SLIP_GRID = "slip_grid"


# slip_grid action order
GRID_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right


def validate_world_dims(
    kind: WorldKind,
    num_states: int,
    num_actions: int,
    noise: float,
    grid_rows: Optional[int],
    grid_cols: Optional[int],
) -> None:
    if num_states < 2 or num_actions < 2:
        raise WorldSpecError(f"need S >= 2 and A >= 2, got S={num_states}, A={num_actions}")
    if not 0.0 <= noise < 1.0:
        raise WorldSpecError(f"noise must lie in [0, 1), got {noise}")
    if kind == WorldKind.SLIP_GRID:
        if num_actions != 4:
            raise WorldSpecError(f"slip_grid needs A = 4, got {num_actions}")
        if grid_rows is None or grid_cols is None:
            raise WorldSpecError("slip_grid needs grid_rows and grid_cols")
        if grid_rows * grid_cols != num_states:
            raise WorldSpecError(
                f"slip_grid needs S = rows*cols, got S={num_states}, rows={grid_rows}, cols={grid_cols}"
            )
    if kind == WorldKind.SHIFT_NOISE and num_actions > num_states:
        raise WorldSpecError(f"shift_noise needs A <= S, got A={num_actions}, S={num_states}")


class WorldSpec(BaseModel):
    """Enumerable synthetic environment: state space 0..S-1, action space 0..A-1."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    world_kind: WorldKind = Field(default=WorldKind.PERMUTATION)
    num_states: int = Field(description="S, number of states.")
    num_actions: int = Field(description="A, number of actions.")
    noise: float = Field(
        default=0.0,
        description="epsilon for shift_noise, slip probability for slip_grid; ignored for permutation.",
    )
    grid_rows: Optional[int] = Field(default=None, ge=1)
    grid_cols: Optional[int] = Field(default=None, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check(self) -> "WorldSpec":
        validate_world_dims(
            self.world_kind,
            self.num_states,
            self.num_actions,
            self.noise,
            self.grid_rows,
            self.grid_cols,
        )
        return self
