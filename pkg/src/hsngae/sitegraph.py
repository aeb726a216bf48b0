"""Home layouts to graph samples: adjacency designs, windows, count features."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .events import N_CLUSTERS, UNCLASSIFIED, EventLog, SensorEvent

logger = logging.getLogger(__name__)

SENSOR_TYPES = ("Door switch", "Light switch", "Light", "Wide area motion", "Temperature", "Motion")
N_TYPES = len(SENSOR_TYPES)

DEFAULT_WINDOW_SECONDS = 180.0
FC_W_FILL = 0.1
SYMMETRY_TOL = 1e-12


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class Sensor:
    sensor_id: str
    type_index: int
    location: str


@dataclass(frozen=True)
class SiteLayout:
    home_id: str
    sensors: tuple[Sensor, ...]
    location_adjacency: frozenset = frozenset()

    def __post_init__(self):
        ids = [s.sensor_id for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise LayoutError(f"{self.home_id}: duplicate sensor ids")
        for s in self.sensors:
            if not s.sensor_id:
                raise LayoutError(f"{self.home_id}: empty sensor id")
            if not 0 <= s.type_index < N_TYPES:
                raise LayoutError(f"{self.home_id}: sensor {s.sensor_id} has type index {s.type_index}")
        located = {s.location for s in self.sensors}
        for pair in self.location_adjacency:
            missing = set(pair) - located
            if missing:
                raise LayoutError(f"{self.home_id}: adjacency names locations without sensors: {sorted(missing)}")

    @property
    def n(self) -> int:
        return len(self.sensors)

    def node_index(self) -> dict[str, int]:
        return {s.sensor_id: i for i, s in enumerate(self.sensors)}

    def type_indices(self) -> np.ndarray:
        return np.array([s.type_index for s in self.sensors], dtype=np.int64)

    def adjacent(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.location_adjacency

    def permuted(self, perm: Sequence[int]) -> "SiteLayout":
        """Layout whose k-th sensor is this layout's ``perm[k]``-th."""
        return SiteLayout(self.home_id, tuple(self.sensors[i] for i in perm), self.location_adjacency)

    @classmethod
    def from_dict(cls, data: dict) -> "SiteLayout":
        sensors = []
        for entry in data["sensors"]:
            type_name = entry["type"]
            if type_name not in SENSOR_TYPES:
                raise LayoutError(f"unknown sensor type {type_name!r}; expected one of {list(SENSOR_TYPES)}")
            sensors.append(Sensor(str(entry["id"]), SENSOR_TYPES.index(type_name), entry.get("location") or ""))
        pairs = frozenset(frozenset(p) for p in data.get("adjacent_locations", []) if len(set(p)) == 2)
        return cls(str(data.get("home_id", "")), tuple(sensors), pairs)

    @classmethod
    def from_json(cls, path) -> "SiteLayout":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "home_id": self.home_id,
            "sensors": [
                {"id": s.sensor_id, "type": SENSOR_TYPES[s.type_index], "location": s.location}
                for s in self.sensors
            ],
            "adjacent_locations": sorted(sorted(p) for p in self.location_adjacency),
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


class AdjacencyDesign(str, enum.Enum):
    DEFAULT = "default"
    IDENTITY = "identity"
    FC_U = "fc-u"
    FC_W = "fc-w"

    @classmethod
    def parse(cls, text: "str | AdjacencyDesign") -> "AdjacencyDesign":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).strip().lower().replace("_", "-"))
        except ValueError:
            raise ValueError(f"unknown adjacency design {text!r}; use one of {[d.value for d in cls]}") from None


def build_adjacency(layout: SiteLayout, design: AdjacencyDesign | str = AdjacencyDesign.DEFAULT) -> np.ndarray:
    """Raw sensor adjacency with a zero diagonal."""
    design = AdjacencyDesign.parse(design)
    n = layout.n
    if n < 1:
        raise LayoutError(f"{layout.home_id}: layout has no sensors")
    for s in layout.sensors:
        if not s.location:
            raise LayoutError(f"{layout.home_id}: sensor {s.sensor_id} has no location")

    if design is AdjacencyDesign.IDENTITY:
        return np.zeros((n, n))
    if design is AdjacencyDesign.FC_U:
        return np.ones((n, n)) - np.eye(n)

    locs = [s.location for s in layout.sensors]
    a = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if locs[i] == locs[j]:
                w = 1.0
            elif layout.adjacent(locs[i], locs[j]):
                w = 0.5
            else:
                w = FC_W_FILL if design is AdjacencyDesign.FC_W else 0.0
            a[i, j] = a[j, i] = w
    return a


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise LayoutError(f"adjacency must be square, got {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=SYMMETRY_TOL):
        raise LayoutError("adjacency must be symmetric")
    if np.any(a < 0):
        raise LayoutError("adjacency must be non-negative")
    a_bar = a + np.eye(a.shape[0])
    d = 1.0 / np.sqrt(a_bar.sum(axis=1))
    out = d[:, None] * a_bar * d[None, :]
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class Window:
    index: int
    start: datetime
    lo: int
    hi: int

    def events(self, log: EventLog) -> tuple[SensorEvent, ...]:
        return log.events[self.lo:self.hi]


def sample_windows(log: EventLog, window_seconds: float = DEFAULT_WINDOW_SECONDS) -> list[Window]:
    """Non-empty half-open windows ``[t0 + kT, t0 + (k+1)T)`` anchored at the first event."""
    if window_seconds <= 0:
        raise ValueError("window length must be positive")
    if not log.events:
        return []
    t0 = log.events[0].timestamp
    k = np.floor(log.seconds() / window_seconds).astype(np.int64)
    windows = []
    bounds = np.flatnonzero(np.diff(k)) + 1
    starts = np.concatenate([[0], bounds])
    stops = np.concatenate([bounds, [len(k)]])
    for lo, hi in zip(starts, stops):
        idx = int(k[lo])
        windows.append(Window(idx, t0 + timedelta(seconds=idx * window_seconds), int(lo), int(hi)))
    return windows


def build_features(events: Sequence[SensorEvent], layout: SiteLayout) -> np.ndarray:
    """N x 6 matrix of firing counts, each in the column of its sensor's type."""
    index = layout.node_index()
    nodes = []
    dropped = 0
    for e in events:
        i = index.get(e.sensor_id)
        if i is None:
            dropped += 1
        else:
            nodes.append(i)
    if dropped:
        logger.warning("%s: dropped %d events from unknown sensors", layout.home_id, dropped)
    return _count_features(np.array(nodes, dtype=np.int64), layout)


def _count_features(nodes: np.ndarray, layout: SiteLayout) -> np.ndarray:
    x = np.zeros((layout.n, N_TYPES))
    counts = np.bincount(nodes, minlength=layout.n).astype(np.float64)
    x[np.arange(layout.n), layout.type_indices()] = counts
    return x


def window_label(clusters: Sequence[int], durations: Sequence[float]) -> int:
    """Cluster with the largest total duration; ties go to the lower index."""
    clusters = np.asarray(clusters, dtype=np.int64)
    durations = np.asarray(durations, dtype=np.float64)
    if clusters.size == 0:
        return UNCLASSIFIED
    totals = np.bincount(clusters, weights=durations, minlength=N_CLUSTERS)
    if totals.max() <= 0:
        return UNCLASSIFIED
    return int(np.argmax(totals))


def window_segments(log: EventLog, window: Window, window_seconds: float,
                    seconds: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Clusters and in-window durations of the activity segments overlapping a window.

    Event ``i`` opens a segment of its cluster that lasts until event ``i+1``;
    the final event's segment runs to the end of its window. The segment
    already running when the window opens counts too.
    """
    t = log.seconds() if seconds is None else seconds
    ws = window.index * window_seconds
    we = ws + window_seconds
    first = max(window.lo - 1, 0)
    idx = np.arange(first, window.hi)
    starts = t[idx]
    ends = np.where(idx + 1 < len(t), t[np.minimum(idx + 1, len(t) - 1)], we)
    durations = np.clip(np.minimum(ends, we) - np.maximum(starts, ws), 0.0, None)
    return log.clusters[idx], durations


@dataclass
class GraphSample:
    a_norm: np.ndarray
    x: np.ndarray
    label: int
    window_start: datetime
    home_id: str


def build_dataset(
    log: EventLog,
    layout: SiteLayout,
    design: AdjacencyDesign | str = AdjacencyDesign.DEFAULT,
    window_seconds: float = DEFAULT_WINDOW_SECONDS,
) -> list[GraphSample]:
    """One labelled graph sample per non-empty window; all share one normalized adjacency."""
    a_norm = normalize_adjacency(build_adjacency(layout, design))
    a_norm.setflags(write=False)
    index = layout.node_index()
    nodes = np.array([index.get(e.sensor_id, -1) for e in log.events], dtype=np.int64)
    unknown = int((nodes < 0).sum())
    if unknown:
        logger.warning("%s: dropped %d events from sensors missing in layout", layout.home_id, unknown)

    seconds = log.seconds()
    samples = []
    for w in sample_windows(log, window_seconds):
        window_nodes = nodes[w.lo:w.hi]
        x = _count_features(window_nodes[window_nodes >= 0], layout)
        if not x.any():
            continue
        clusters, durations = window_segments(log, w, window_seconds, seconds)
        samples.append(GraphSample(a_norm, x, window_label(clusters, durations), w.start, layout.home_id))
    samples.sort(key=lambda s: s.window_start)
    return samples
