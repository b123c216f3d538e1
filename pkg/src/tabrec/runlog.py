"""In-memory event log shared across pipeline stages.

Events become the run's line-delimited JSON audit trail; warnings are
ordinary events with kind "warning" so degraded-output decisions stay
visible without failing the run.
"""

from __future__ import annotations


class RunLog:
    def __init__(self):
        self.events: list[dict] = []

    def event(self, stage: str, kind: str, **data) -> None:
        self.events.append({"stage": stage, "kind": kind, **data})

    def warning(self, stage: str, message: str, **data) -> None:
        self.event(stage, "warning", message=message, **data)

    @property
    def warnings(self) -> list[dict]:
        return [e for e in self.events if e["kind"] == "warning"]
