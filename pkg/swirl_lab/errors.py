from __future__ import annotations

from typing import List, Optional


class SwirlError(Exception):
    """Base class for every error raised by swirl_lab."""


class ConfigError(SwirlError, ValueError):
    """Run-file problem. Carries one message per offending line."""

    def __init__(self, problems: List[str]):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))

    @classmethod
    def at(cls, line: Optional[int], message: str) -> "ConfigError":
        prefix = f"line {line}: " if line is not None else ""
        return cls([prefix + message])


class WorldSpecError(SwirlError, ValueError):
    pass


class DatasetError(SwirlError, ValueError):
    pass


class ContextIndexError(SwirlError, IndexError):
    pass


class RoleError(SwirlError, ValueError):
    """Frozen/mutable roles swapped, or FWM/IDM shapes mixed up."""


class EvidenceError(SwirlError, ValueError):
    """Observed transition has zero probability under every action."""


class CheckpointError(SwirlError, ValueError):
    pass


class InstanceTooLargeError(SwirlError, ValueError):
    pass


class VerificationFailed(SwirlError):
    def __init__(self, failed: List[str]):
        self.failed = list(failed)
        super().__init__("failed checks: " + ", ".join(self.failed))
