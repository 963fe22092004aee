"""Run files: sectioned `key = value` text validated into a RunConfig.

    [world]
    num_states = 8
    num_actions = 4

    [swirl.phase2.grpo]
    kl_coeff = 0.1

    [output]
    output_dir = runs/demo

Section headers map to nested fields. Lines starting with `#` or `;` are
comments. Every problem is reported with its line number.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError
from .models.init import InitKind, LabelledSftInit
from .training.swirl import SwirlConfig
from .worlds.dataset import uniform_prior, validate_prior
from .worlds.spec import WorldSpec

REQUIRED_KEYS = ("world.num_states", "world.num_actions", "output.output_dir")

_SECTION_RE = re.compile(r"^\[\s*([A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)\s*\]$")
_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class DatasetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(default=2000, ge=1)
    action_prior: Union[str, Tuple[float, ...]] = Field(
        default="uniform",
        description="'uniform' or a comma-separated probability per action.",
    )
    seed: int = Field(default=0, ge=0, lt=2**64)
    labelled_fraction: float = Field(default=0.5, gt=0.0, lt=1.0)

    @field_validator("action_prior", mode="before")
    @classmethod
    def _parse_prior(cls, v: Any) -> Any:
        if isinstance(v, str):
            s = v.strip()
            if s.lower() == "uniform":
                return "uniform"
            try:
                return tuple(float(p) for p in s.split(","))
            except ValueError as e:
                raise ValueError(f"expected 'uniform' or comma-separated floats, got {v!r}") from e
        return v

    def prior_vector(self, num_actions: int) -> np.ndarray:
        if self.action_prior == "uniform":
            return uniform_prior(num_actions)
        return validate_prior(self.action_prior, num_actions)


class InitConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    fwm: InitKind = Field(default_factory=LabelledSftInit, discriminator="kind")
    idm: InitKind = Field(default_factory=LabelledSftInit, discriminator="kind")
    seed: int = Field(default=0, ge=0, lt=2**64)


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    output_dir: str = Field(min_length=1)
    emit_every: int = Field(default=50, ge=1, description="Steps between full analysis records.")


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    world: WorldSpec
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    init: InitConfig = Field(default_factory=InitConfig)
    swirl: SwirlConfig = Field(default_factory=SwirlConfig)
    output: OutputConfig

    @property
    def output_dir(self) -> Path:
        return Path(self.output.output_dir)

    @property
    def emit_every(self) -> int:
        return self.output.emit_every


# ---------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------
@dataclass
class _Source:
    values: Dict[str, Any]
    key_lines: Dict[str, int]
    section_lines: Dict[str, int]


def _scan(text: str) -> _Source:
    values: Dict[str, Any] = {}
    key_lines: Dict[str, int] = {}
    section_lines: Dict[str, int] = {}
    problems: List[str] = []
    section = ""

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            m = _SECTION_RE.match(line)
            if not m:
                problems.append(f"line {lineno}: malformed section header {line!r}")
                continue
            section = m.group(1)
            section_lines.setdefault(section, lineno)
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            problems.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        if not _KEY_RE.match(key):
            problems.append(f"line {lineno}: invalid key {key!r}")
            continue
        if not section:
            problems.append(f"line {lineno}: {key}: key outside of any section")
            continue
        path = f"{section}.{key}"
        if path in key_lines:
            problems.append(f"line {lineno}: {path}: duplicate key (first set on line {key_lines[path]})")
            continue
        key_lines[path] = lineno

        node = values
        parts = path.split(".")
        for p in parts[:-1]:
            child = node.setdefault(p, {})
            if not isinstance(child, dict):
                problems.append(f"line {lineno}: {path}: '{p}' is both a key and a section")
                break
            node = child
        else:
            if isinstance(node.get(parts[-1]), dict):
                problems.append(f"line {lineno}: {path}: '{parts[-1]}' is both a key and a section")
            else:
                node[parts[-1]] = value.strip()

    if problems:
        raise ConfigError(problems)
    return _Source(values=values, key_lines=key_lines, section_lines=section_lines)


_UNION_TAGS = {"uniform", "from_kernel_noisy", "from_labelled_sft", "random"}


def _line_for(loc: Tuple[Any, ...], src: _Source) -> Tuple[Optional[int], str]:
    parts = [str(p) for p in loc if isinstance(p, str) and p not in _UNION_TAGS]
    path = ".".join(parts)
    if path in src.key_lines:
        return src.key_lines[path], path
    while parts:
        section = ".".join(parts)
        if section in src.section_lines:
            return src.section_lines[section], path
        parts.pop()
    return None, path


def _problems_from(err: ValidationError, src: _Source) -> List[str]:
    problems = []
    for e in err.errors():
        line, path = _line_for(e["loc"], src)
        msg = "unknown key" if e["type"] == "extra_forbidden" else e["msg"]
        prefix = f"line {line}: " if line is not None else ""
        problems.append(f"{prefix}{path or '<root>'}: {msg}")
    return problems


def parse_config(text: str) -> RunConfig:
    src = _scan(text)
    missing = [k for k in REQUIRED_KEYS if k not in src.key_lines]
    if missing:
        raise ConfigError([f"missing required key {k}" for k in missing])
    try:
        return RunConfig.model_validate(src.values)
    except ValidationError as e:
        raise ConfigError(_problems_from(e, src)) from e


def load_config(path: Path) -> RunConfig:
    if not path.exists():
        raise FileNotFoundError(f"Config not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"))
