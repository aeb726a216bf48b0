"""CASAS-style event logs and the 13 activity clusters."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

logger = logging.getLogger(__name__)

CLUSTERS = (
    "Unclassified",
    "Personal Hygiene",
    "Cooking",
    "Eating",
    "Working",
    "Entering/Leaving Home",
    "House Keeping",
    "Taking Medicine",
    "Washing Dishes",
    "Toilet",
    "Relaxing",
    "Exercising",
    "Other",
)
N_CLUSTERS = len(CLUSTERS)
UNCLASSIFIED = 0

MAX_MALFORMED_FRACTION = 0.01


class EventParseError(ValueError):
    def __init__(self, message: str, lineno: int | None = None, line: str | None = None):
        self.lineno = lineno
        self.line = line
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(f"{where}{message}")


class EventLogError(ValueError):
    pass


@dataclass(frozen=True)
class SensorEvent:
    timestamp: datetime
    sensor_id: str
    value: str
    raw_activity: Optional[str] = None

    def to_line(self) -> str:
        if self.timestamp.microsecond:
            stamp = self.timestamp.strftime("%Y-%m-%d %H:%M:%S.%f")
        else:
            stamp = self.timestamp.strftime("%Y-%m-%d %H:%M:%S")
        parts = [stamp, self.sensor_id, self.value]
        if self.raw_activity:
            parts.append(self.raw_activity)
        return " ".join(parts)


def parse_timestamp(date: str, time: str) -> datetime:
    text = f"{date} {time}"
    fmt = "%Y-%m-%d %H:%M:%S.%f" if "." in time else "%Y-%m-%d %H:%M:%S"
    return datetime.strptime(text, fmt)


def parse_event_line(line: str, lineno: int | None = None) -> SensorEvent | None:
    """Parse one ``date time sensor value [activity...]`` record.

    Returns None for blank and ``#`` comment lines.
    """
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None
    fields = stripped.split()
    if len(fields) < 4:
        raise EventParseError(f"expected at least 4 fields, got {len(fields)}", lineno, line)
    try:
        ts = parse_timestamp(fields[0], fields[1])
    except ValueError:
        raise EventParseError(f"malformed timestamp {fields[0]} {fields[1]!r}", lineno, line) from None
    activity = " ".join(fields[4:]) or None
    return SensorEvent(ts, fields[2], fields[3], activity)


@dataclass(frozen=True)
class LabelMap:
    """Raw activity annotation -> cluster index.

    An exact ``mapping`` entry wins over ``substring_rules``, which are tried
    in order (case-sensitive); anything else is Unclassified.
    """

    clusters: tuple[str, ...]
    mapping: dict[str, int]
    substring_rules: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if tuple(self.clusters) != CLUSTERS:
            raise ValueError(f"clusters must be exactly {list(CLUSTERS)}")
        targets = list(self.mapping.values()) + [c for _, c in self.substring_rules]
        if any(not 0 <= c < N_CLUSTERS for c in targets):
            raise ValueError("label map targets must lie in [0, 13)")

    @classmethod
    def from_dict(cls, data: dict) -> "LabelMap":
        clusters = tuple(data["clusters"])
        if clusters != CLUSTERS:
            raise ValueError(f"clusters must be exactly {list(CLUSTERS)}")
        index = {name: i for i, name in enumerate(clusters)}

        def lookup(name):
            try:
                return index[name]
            except KeyError:
                raise ValueError(f"unknown cluster {name!r} in label map") from None

        mapping = {raw: lookup(c) for raw, c in data.get("mapping", {}).items()}
        rules = tuple((r["contains"], lookup(r["cluster"])) for r in data.get("substring_rules", []))
        return cls(clusters, mapping, rules)

    @classmethod
    def from_json(cls, path) -> "LabelMap":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def default(cls) -> "LabelMap":
        text = resources.files("hsngae.data").joinpath("label_map.json").read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "clusters": list(self.clusters),
            "mapping": {raw: self.clusters[c] for raw, c in self.mapping.items()},
            "substring_rules": [{"contains": s, "cluster": self.clusters[c]} for s, c in self.substring_rules],
        }


def map_activity_label(raw_activity: str | None, label_map: LabelMap, unmapped: Counter | None = None) -> int:
    """Cluster index for an annotation; absent or unknown labels give 0.

    Unknown labels are logged and, if ``unmapped`` is given, counted there.
    """
    if not raw_activity:
        return UNCLASSIFIED
    hit = label_map.mapping.get(raw_activity)
    if hit is not None:
        return hit
    for needle, cluster in label_map.substring_rules:
        if needle in raw_activity:
            return cluster
    if unmapped is not None:
        if raw_activity not in unmapped:
            logger.warning("unmapped activity label %r -> Unclassified", raw_activity)
        unmapped[raw_activity] += 1
    else:
        logger.warning("unmapped activity label %r -> Unclassified", raw_activity)
    return UNCLASSIFIED


@dataclass
class EventLog:
    home_id: str
    events: tuple[SensorEvent, ...]
    clusters: np.ndarray
    reordered: int = 0
    malformed: list[EventParseError] = field(default_factory=list)
    unmapped: Counter = field(default_factory=Counter)

    def __len__(self) -> int:
        return len(self.events)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventLog):
            return NotImplemented
        return (
            self.home_id == other.home_id
            and self.events == other.events
            and np.array_equal(self.clusters, other.clusters)
            and self.reordered == other.reordered
        )

    @property
    def is_sorted(self) -> bool:
        return self.reordered == 0

    def seconds(self) -> np.ndarray:
        """Event times in seconds relative to the first event."""
        if not self.events:
            return np.zeros(0)
        t0 = self.events[0].timestamp
        return np.array([(e.timestamp - t0).total_seconds() for e in self.events])


def build_event_log(
    events: Iterable[SensorEvent],
    label_map: LabelMap | None = None,
    home_id: str = "",
) -> EventLog:
    """Sort events (stable) and attach per-event cluster indices."""
    label_map = label_map or LabelMap.default()
    events = list(events)
    reordered = 0
    latest = None
    for e in events:
        if latest is not None and e.timestamp < latest:
            reordered += 1
        else:
            latest = e.timestamp
    events.sort(key=lambda e: e.timestamp)
    unmapped: Counter = Counter()
    clusters = np.array([map_activity_label(e.raw_activity, label_map, unmapped) for e in events], dtype=np.int64)
    return EventLog(home_id, tuple(events), clusters, reordered, [], unmapped)


def load_event_log(path, label_map: LabelMap | None = None, home_id: str | None = None) -> EventLog:
    """Read an event file into a time-sorted log.

    Malformed lines are skipped and kept on ``log.malformed`` as long as they
    stay within 1% of the non-blank lines; past that the whole load fails.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise EventLogError(f"cannot read event log {path}: {exc}") from exc

    events = []
    bad: list[EventParseError] = []
    records = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        try:
            event = parse_event_line(line, lineno)
        except EventParseError as err:
            bad.append(err)
            records += 1
            continue
        if event is not None:
            events.append(event)
            records += 1

    if bad and len(bad) > MAX_MALFORMED_FRACTION * records:
        listing = "\n  ".join(f"{e} | {e.line!r}" for e in bad[:10])
        raise EventLogError(f"{path}: {len(bad)} of {records} lines malformed; first offenders:\n  {listing}")

    log = build_event_log(events, label_map, home_id if home_id is not None else path.stem.split(".")[0])
    log.malformed = bad
    if log.reordered:
        logger.info("%s: sorted %d out-of-order lines", path, log.reordered)
    return log


def write_event_log(log: EventLog | Iterable[SensorEvent], path) -> None:
    events = log.events if isinstance(log, EventLog) else log
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(e.to_line())
            fh.write("\n")
