from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

try:
    from dotenv import load_dotenv
except Exception:  # pragma: no cover
    load_dotenv = None


LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


@dataclass(frozen=True)
class Settings:
    output_root: Path
    log_level: str

    def resolve_output(self, output_dir: str | Path) -> Path:
        p = Path(output_dir)
        return p if p.is_absolute() else self.output_root / p


def _getenv(key: str, default: str | None = None) -> str | None:
    v = os.getenv(key)
    if v is None or v.strip() == "":
        return default
    return v


def load_settings() -> Settings:
    # Load .env automatically (optional)
    if load_dotenv is not None:
        try:
            load_dotenv(dotenv_path=Path(__file__).resolve().parents[1] / ".env")
        except Exception:
            pass

    output_root = Path(_getenv("SWIRL_OUTPUT_ROOT", ".") or ".").resolve()
    log_level = (_getenv("SWIRL_LOG_LEVEL", "INFO") or "INFO").upper()

    return Settings(
        output_root=output_root,
        log_level=log_level,
    )


def configure_logging(level: str = "INFO") -> None:
    root = logging.getLogger()
    if not any(getattr(h, "_swirl", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._swirl = True  # type: ignore[attr-defined]
        root.addHandler(handler)
    root.setLevel(getattr(logging, level.upper(), logging.INFO))
