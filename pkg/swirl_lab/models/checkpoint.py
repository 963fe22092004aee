from __future__ import annotations

import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..errors import CheckpointError
from ..utils import json_dumps, json_loads, sha256_bytes
from .policy import ConditionalCategorical, Role

MAGIC = b"SWIRL1"
SIDECAR_FORMAT = "swirl-checkpoint-v1"
_ROLE_BYTES = {Role.FWM: 0, Role.IDM: 1}
_HEADER = struct.Struct("<B3I")


def encode_checkpoint(model: ConditionalCategorical) -> bytes:
    d1, d2, k = model.logits.shape
    head = MAGIC + _HEADER.pack(_ROLE_BYTES[model.role], d1, d2, k)
    return head + np.ascontiguousarray(model.logits, dtype="<f8").tobytes(order="C")


def decode_checkpoint(blob: bytes) -> ConditionalCategorical:
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic, not a SWIRL1 checkpoint")
    off = len(MAGIC)
    if len(blob) < off + _HEADER.size:
        raise CheckpointError("truncated header")
    role_byte, d1, d2, k = _HEADER.unpack_from(blob, off)
    roles = {v: r for r, v in _ROLE_BYTES.items()}
    if role_byte not in roles:
        raise CheckpointError(f"unknown role byte {role_byte}")
    payload = blob[off + _HEADER.size:]
    if len(payload) != d1 * d2 * k * 8:
        raise CheckpointError(f"payload of {len(payload)} bytes does not match dims {(d1, d2, k)}")
    logits = np.frombuffer(payload, dtype="<f8").reshape(d1, d2, k).astype(np.float64)
    try:
        return ConditionalCategorical(role=roles[role_byte], logits=logits)
    except ValueError as e:
        raise CheckpointError(f"invalid checkpoint contents: {e}") from e


def write_checkpoint(
    path: Path,
    model: ConditionalCategorical,
    provenance: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write `<path>` (binary) and `<path>.json` (sidecar). Returns the sidecar path."""
    blob = encode_checkpoint(model)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(blob)
    sidecar = {
        "format": SIDECAR_FORMAT,
        "role": model.role.value,
        "dims": list(model.logits.shape),
        "sha256": sha256_bytes(blob),
        **(provenance or {}),
    }
    side_path = path.with_name(path.name + ".json")
    side_path.write_text(json_dumps(sidecar) + "\n", encoding="utf-8")
    return side_path


def read_checkpoint(path: Path, expected_role: Optional[Role] = None) -> Tuple[ConditionalCategorical, Dict[str, Any]]:
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    blob = path.read_bytes()
    model = decode_checkpoint(blob)
    side_path = path.with_name(path.name + ".json")
    sidecar: Dict[str, Any] = {}
    if side_path.exists():
        sidecar = json_loads(side_path.read_text(encoding="utf-8"))
        if sidecar.get("format") != SIDECAR_FORMAT:
            raise CheckpointError(f"{side_path}: version tag {sidecar.get('format')!r} not {SIDECAR_FORMAT!r}")
        if sidecar.get("sha256") != sha256_bytes(blob):
            raise CheckpointError(f"{path}: payload hash does not match sidecar")
        if list(sidecar.get("dims", [])) != list(model.logits.shape):
            raise CheckpointError(f"{path}: dims disagree with sidecar")
    if expected_role is not None and model.role != Role(expected_role):
        raise CheckpointError(f"{path}: expected a {Role(expected_role).value} checkpoint, got {model.role.value}")
    return model, sidecar
