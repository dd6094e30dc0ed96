"""Timestamped event records and their tab-separated file format.

Ground-truth files carry (filename, onset, offset, event_label); detection
files append a confidence column. Durations files carry (filename,
duration). All files start with a header row naming the columns.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .errors import ConfigurationError

_GT_HEADER = ["filename", "onset", "offset", "event_label"]
_DET_HEADER = _GT_HEADER + ["confidence"]
_DUR_HEADER = ["filename", "duration"]


@dataclass(frozen=True)
class Event:
    filename: str
    onset: float
    offset: float
    label: str
    confidence: float | None = None

    def __post_init__(self):
        if not self.onset < self.offset:
            raise ConfigurationError(
                f"event {self.label} in {self.filename}: onset {self.onset} "
                f"must precede offset {self.offset}")


def write_events_tsv(path: str | os.PathLike, events: list[Event]) -> None:
    with_conf = any(e.confidence is not None for e in events)
    header = _DET_HEADER if with_conf else _GT_HEADER
    lines = ["\t".join(header)]
    for e in events:
        row = [e.filename, f"{e.onset:.3f}", f"{e.offset:.3f}", e.label]
        if with_conf:
            row.append("%.6f" % (e.confidence if e.confidence is not None
                                 else 1.0))
        lines.append("\t".join(row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_events_tsv(path: str | os.PathLike) -> list[Event]:
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            cells = line.split("\t")
            if lineno == 1 and cells[:4] == _GT_HEADER:
                continue
            if len(cells) not in (4, 5):
                raise ConfigurationError(
                    f"{path}:{lineno}: expected 4 or 5 columns, "
                    f"got {len(cells)}")
            try:
                onset, offset = float(cells[1]), float(cells[2])
                conf = float(cells[4]) if len(cells) == 5 else None
            except ValueError as exc:
                raise ConfigurationError(
                    f"{path}:{lineno}: bad number: {exc}") from exc
            if onset < 0:
                raise ConfigurationError(
                    f"{path}:{lineno}: negative onset {onset}")
            if not onset < offset:
                raise ConfigurationError(
                    f"{path}:{lineno}: onset {onset} must precede "
                    f"offset {offset}")
            events.append(Event(cells[0], onset, offset, cells[3], conf))
    return events


def write_durations_tsv(path: str | os.PathLike,
                        durations: dict[str, float]) -> None:
    lines = ["\t".join(_DUR_HEADER)]
    for name in durations:
        lines.append(f"{name}\t{durations[name]:.3f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_durations_tsv(path: str | os.PathLike) -> dict[str, float]:
    durations: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            cells = line.split("\t")
            if lineno == 1 and cells == _DUR_HEADER:
                continue
            if len(cells) != 2:
                raise ConfigurationError(
                    f"{path}:{lineno}: expected 2 columns, got {len(cells)}")
            try:
                dur = float(cells[1])
            except ValueError as exc:
                raise ConfigurationError(
                    f"{path}:{lineno}: bad duration: {exc}") from exc
            if dur <= 0:
                raise ConfigurationError(
                    f"{path}:{lineno}: duration must be positive, got {dur}")
            if cells[0] in durations:
                raise ConfigurationError(
                    f"{path}:{lineno}: duplicate filename {cells[0]}")
            durations[cells[0]] = dur
    return durations
