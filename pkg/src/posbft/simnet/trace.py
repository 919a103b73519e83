"""Trace file: one tab-separated event per line, then a metrics block.

::

    # posbft-trace 1
    <time_ms>\t<node>\t<kind>\t<k=v k=v ...>
    ...
    #metrics
    <key>\t<json value>

Node ``-1`` is the simulator itself (client transactions, partitions).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

HEADER = "# posbft-trace 1"
METRICS = "#metrics"


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    time: int
    node: int
    kind: str
    fields: dict[str, str]


def format_event(time: int, node: int, kind: str, fields: dict) -> str:
    payload = " ".join(f"{k}={v}" for k, v in fields.items())
    return f"{time}\t{node}\t{kind}\t{payload}"


def parse_event(line: str) -> Event:
    parts = line.split("\t")
    if len(parts) != 4:
        raise TraceError(f"malformed event line: {line!r}")
    try:
        time, node = int(parts[0]), int(parts[1])
    except ValueError:
        raise TraceError(f"malformed event line: {line!r}") from None
    fields = {}
    for item in parts[3].split():
        k, sep, v = item.partition("=")
        if not sep:
            raise TraceError(f"malformed field {item!r}")
        fields[k] = v
    return Event(time, node, parts[2], fields)


@dataclass
class SimTrace:
    lines: list[str] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def events(self):
        for line in self.lines:
            yield parse_event(line)

    def count(self, kind: str) -> int:
        tag = f"\t{kind}\t"
        return sum(1 for line in self.lines if tag in line)

    def text(self) -> str:
        out = [HEADER, *self.lines, METRICS]
        out += [f"{k}\t{json.dumps(self.metrics[k], sort_keys=True)}" for k in sorted(self.metrics)]
        return "\n".join(out) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.text())

    @classmethod
    def parse(cls, text: str) -> "SimTrace":
        rows = text.splitlines()
        if not rows or rows[0] != HEADER:
            raise TraceError("not a trace file")
        try:
            split = rows.index(METRICS)
        except ValueError:
            raise TraceError("trace has no metrics block") from None
        lines = rows[1:split]
        for line in lines:
            parse_event(line)
        metrics = {}
        for row in rows[split + 1:]:
            if not row:
                continue
            key, sep, value = row.partition("\t")
            if not sep:
                raise TraceError(f"malformed metrics row {row!r}")
            try:
                metrics[key] = json.loads(value)
            except json.JSONDecodeError as exc:
                raise TraceError(f"metric {key}: {exc}") from None
        return cls(lines, metrics)

    @classmethod
    def read(cls, path: str | Path) -> "SimTrace":
        try:
            return cls.parse(Path(path).read_text())
        except OSError as exc:
            raise TraceError(f"cannot read {path}: {exc}") from None
