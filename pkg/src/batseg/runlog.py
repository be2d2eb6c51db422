"""Line-delimited JSON run logs, one event per line.

The log content is a pure function of (config, seed): replaying a command
reproduces it byte for byte. Wall-clock timings are therefore kept out of the
log proper and written to a sidecar ``timings.json`` next to it.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from .errors import InvalidInputError
from .fsio import atomic_write_text


class RunLogWriter:
    """Collects events, then writes the whole log atomically on close."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.events: list[dict] = []
        self._timings: dict[str, float] = {}
        self._t0 = time.perf_counter()

    def event(self, etype: str, **fields) -> None:
        self.events.append({"event": etype, **fields})

    def artifact(self, kind: str, path: str | Path) -> None:
        rel = Path(path)
        try:
            rel = rel.relative_to(self.path.parent)
        except ValueError:
            pass
        self.event("artifact", kind=kind, path=str(rel))

    def mark(self, phase: str) -> None:
        now = time.perf_counter()
        self._timings[phase] = now - self._t0
        self._t0 = now

    def close(self) -> None:
        lines = [json.dumps(e, sort_keys=True) for e in self.events]
        atomic_write_text(self.path, "\n".join(lines) + "\n")
        timings_path = self.path.with_name(self.path.stem.split(".")[0] + ".timings.json")
        atomic_write_text(
            timings_path,
            json.dumps({"log": self.path.name, "seconds": self._timings}, sort_keys=True, indent=1)
            + "\n",
        )


def read_runlog(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"run log not found: {path}")
    events = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            events.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}:{lineno}: bad run log line: {exc}") from exc
    return events


def find_event(events: list[dict], kind: str) -> dict | None:
    for e in events:
        if e.get("event") == kind:
            return e
    return None
