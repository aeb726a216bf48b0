"""Seeded synthetic smart homes with heterogeneous layouts and shared activity semantics.

Every activity happens in a fixed kind of room in every home, and every room
kind draws its sensors from a fixed type profile. Homes differ in room count,
room order, sensor count and exact type mix, so the structure that carries
over between homes is "which sensor types fire, and how much".
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .events import CLUSTERS, EventLog, LabelMap, SensorEvent, build_event_log, write_event_log
from .sitegraph import N_TYPES, Sensor, SiteLayout

logger = logging.getLogger(__name__)

# type weights in SENSOR_TYPES order:
# Door switch, Light switch, Light, Wide area motion, Temperature, Motion
ROOM_KINDS: dict[str, tuple[float, ...]] = {
    "bathroom": (3, 3, 0, 0, 0, 2),
    "kitchen": (0, 0, 1, 0, 3, 2),
    "office": (0, 2, 3, 0, 0, 1),
    "livingroom": (0, 0, 1, 3, 0, 1),
    "diningroom": (0, 1, 2, 1, 1, 0),
    "entrance": (4, 0, 0, 1, 0, 1),
    "bedroom": (1, 1, 0, 0, 0, 2),
    "laundry": (1, 0, 0, 0, 2, 1),
    "hallway": (0, 0, 0, 1, 0, 3),
}

ACTIVITY_ROOM = {
    "Unclassified": "bedroom",
    "Personal Hygiene": "bathroom",
    "Cooking": "kitchen",
    "Eating": "diningroom",
    "Working": "office",
    "Entering/Leaving Home": "entrance",
    "House Keeping": "laundry",
    "Taking Medicine": "kitchen",
    "Washing Dishes": "kitchen",
    "Toilet": "bathroom",
    "Relaxing": "livingroom",
    "Exercising": "livingroom",
    "Other": "bedroom",
}

RAW_LABEL = {
    "Unclassified": None,
    "Personal Hygiene": "Groom",
    "Cooking": "Cook",
    "Eating": "Eat",
    "Working": "Work",
    "Entering/Leaving Home": "Enter_Home",
    "House Keeping": "Housekeeping",
    "Taking Medicine": "Take_Medicine",
    "Washing Dishes": "Wash_Dishes",
    "Toilet": "Toilet",
    "Relaxing": "Relax",
    "Exercising": "Exercise",
    "Other": "Other_Activity",
}

ID_PREFIX = ("D", "LS", "L", "MA", "T", "M")
MOTION_TYPES = (3, 5)
MOTION_WEIGHT = 2.0
START = datetime(2012, 7, 18, 0, 0, 0)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    rooms_per_home: tuple[int, int] = (4, 7)
    sensors_per_room: tuple[int, int] = (2, 5)
    activities: tuple[str, ...] = ("Personal Hygiene", "Cooking", "Working", "Relaxing")
    mean_dwell_seconds: float = 600.0
    events_per_minute: float = 6.0
    duration_hours: float = 24.0
    n_homes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "rooms_per_home", tuple(int(v) for v in self.rooms_per_home))
        object.__setattr__(self, "sensors_per_room", tuple(int(v) for v in self.sensors_per_room))
        object.__setattr__(self, "activities", tuple(self.activities))
        for name in self.activities:
            if name not in CLUSTERS:
                raise ValueError(f"unknown activity cluster {name!r}")
        if not self.activities:
            raise ValueError("need at least one activity")
        for lo, hi in (self.rooms_per_home, self.sensors_per_room):
            if not 1 <= lo <= hi:
                raise ValueError("ranges must satisfy 1 <= low <= high")
        if self.mean_dwell_seconds <= 0 or self.duration_hours <= 0:
            raise ValueError("dwell time and duration must be positive")
        if self.events_per_minute < 0:
            raise ValueError("event rate must be non-negative")
        if self.n_homes < 1:
            raise ValueError("n_homes must be >= 1")

    def validate_for_transfer(self) -> None:
        """Stricter checks for generating an experiment: >= 2 activities, >= 2 homes, non-zero rate."""
        if len(set(self.activities)) < 2:
            raise ValueError("a transfer experiment needs at least two activities")
        if self.n_homes < 2:
            raise ValueError("a transfer experiment needs at least two homes")
        if self.events_per_minute <= 0:
            raise ValueError("event rate must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass(frozen=True)
class ScriptEntry:
    cluster: int
    room: str
    start: float
    duration: float

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass
class ActivityScript:
    entries: list[ScriptEntry] = field(default_factory=list)

    def window_label(self, start: float, end: float) -> int:
        """Cluster with the most scripted time inside ``[start, end)``; lower index wins ties."""
        totals = np.zeros(len(CLUSTERS))
        for e in self.entries:
            overlap = min(e.end, end) - max(e.start, start)
            if overlap > 0:
                totals[e.cluster] += overlap
        return int(np.argmax(totals)) if totals.max() > 0 else 0


def _room_kinds(config: SynthConfig, rng: np.random.Generator) -> list[str]:
    required = list(dict.fromkeys(ACTIVITY_ROOM[a] for a in config.activities))
    lo, hi = config.rooms_per_home
    n_rooms = max(int(rng.integers(lo, hi + 1)), len(required))
    spare = [k for k in ROOM_KINDS if k not in required]
    extra = []
    for _ in range(n_rooms - len(required)):
        pool = spare if spare else list(ROOM_KINDS)
        pick = pool[int(rng.integers(len(pool)))]
        if pick in spare:
            spare.remove(pick)
        extra.append(pick)
    kinds = required + extra
    return [kinds[i] for i in rng.permutation(len(kinds))]


def _layout_attempt(config: SynthConfig, home_index: int, salt: int) -> SiteLayout:
    rng = np.random.default_rng([config.seed, home_index, salt])
    kinds = _room_kinds(config, rng)
    names, seen = [], {}
    for k in kinds:
        seen[k] = seen.get(k, 0) + 1
        names.append(k if seen[k] == 1 else f"{k}{seen[k]}")
    counters = [0] * N_TYPES
    sensors = []
    lo, hi = config.sensors_per_room
    for kind, name in zip(kinds, names):
        weights = np.asarray(ROOM_KINDS[kind], dtype=np.float64)
        for t in rng.choice(N_TYPES, size=int(rng.integers(lo, hi + 1)), p=weights / weights.sum()):
            counters[t] += 1
            sensors.append(Sensor(f"{ID_PREFIX[t]}{counters[t]:03d}", int(t), name))
    adjacency = frozenset(frozenset((names[i], names[i + 1])) for i in range(len(names) - 1))
    return SiteLayout(f"synth{home_index}", tuple(sensors), adjacency)


def _type_mix(layout: SiteLayout) -> tuple[int, ...]:
    return tuple(np.bincount(layout.type_indices(), minlength=N_TYPES))


def _distinct_layouts(config: SynthConfig, count: int, max_tries: int = 100) -> list[SiteLayout]:
    layouts: list[SiteLayout] = []
    for home_index in range(count):
        for salt in range(max_tries):
            layout = _layout_attempt(config, home_index, salt)
            if all(layout.n != e.n and _type_mix(layout) != _type_mix(e) for e in layouts):
                break
        else:
            raise RuntimeError(f"could not draw a distinct layout for home {home_index}; widen the ranges")
        layouts.append(layout)
    return layouts


def generate_layout(config: SynthConfig, home_index: int) -> SiteLayout:
    """Layout for one home; differs from every lower-index home in sensor count and type mix."""
    return _distinct_layouts(config, home_index + 1)[home_index]


def room_of_kind(layout: SiteLayout, kind: str) -> str:
    for s in layout.sensors:
        if s.location == kind:
            return s.location
    raise ValueError(f"{layout.home_id} has no {kind}")


def _format_value(type_index: int, state: bool, rng: np.random.Generator) -> str:
    if type_index == 4:
        return f"{rng.uniform(18.0, 26.0):.1f}"
    if type_index == 2:
        return f"{rng.uniform(0.0, 100.0):.2f}"
    if type_index == 0:
        return "OPEN" if state else "CLOSE"
    return "ON" if state else "OFF"


def make_script(config: SynthConfig, layout: SiteLayout, rng: np.random.Generator) -> ActivityScript:
    """Semi-Markov schedule: the next activity differs from the current one; dwell times
    are a quarter of the mean plus an exponential making up the rest."""
    horizon = config.duration_hours * 3600.0
    acts = list(dict.fromkeys(config.activities))
    script = ActivityScript()
    t = 0.0
    current = acts[int(rng.integers(len(acts)))]
    while t < horizon:
        dwell = 0.25 * config.mean_dwell_seconds + rng.exponential(0.75 * config.mean_dwell_seconds)
        dwell = min(dwell, horizon - t)
        room = room_of_kind(layout, ACTIVITY_ROOM[current])
        script.entries.append(ScriptEntry(CLUSTERS.index(current), room, t, dwell))
        t += dwell
        if len(acts) > 1:
            others = [a for a in acts if a != current]
            current = others[int(rng.integers(len(others)))]
    return script


def simulate_events(layout: SiteLayout, config: SynthConfig, home_index: int = 0,
                    label_map: LabelMap | None = None) -> tuple[EventLog, ActivityScript]:
    """Annotated event log driven by an activity script.

    While an activity runs, the sensors of its room fire as one Poisson
    process at ``events_per_minute``; motion-type sensors get twice the share.
    """
    rng = np.random.default_rng([config.seed, home_index, 1_000_003])
    script = make_script(config, layout, rng)
    rate = config.events_per_minute / 60.0
    by_room: dict[str, list[int]] = {}
    for i, s in enumerate(layout.sensors):
        by_room.setdefault(s.location, []).append(i)
    state = [False] * layout.n

    events = []
    for entry in script.entries:
        if rate <= 0:
            break
        members = by_room[entry.room]
        weights = np.array([MOTION_WEIGHT if layout.sensors[i].type_index in MOTION_TYPES else 1.0
                            for i in members])
        count = int(rng.poisson(rate * entry.duration))
        times = np.sort(entry.start + rng.uniform(0.0, entry.duration, size=count))
        picks = rng.choice(len(members), size=count, p=weights / weights.sum())
        raw = RAW_LABEL[CLUSTERS[entry.cluster]]
        for t, k in zip(times, picks):
            i = members[k]
            sensor = layout.sensors[i]
            state[i] = not state[i]
            stamp = START + timedelta(microseconds=int(round(t * 1e6)))
            events.append(SensorEvent(stamp, sensor.sensor_id, _format_value(sensor.type_index, state[i], rng), raw))
    if not events:
        logger.warning("%s: simulation produced no events (event rate %s)", layout.home_id, config.events_per_minute)
    return build_event_log(events, label_map, layout.home_id), script


@dataclass
class SynthHome:
    layout: SiteLayout
    log: EventLog
    script: ActivityScript


def generate_homes(config: SynthConfig, label_map: LabelMap | None = None) -> list[SynthHome]:
    homes = []
    for i, layout in enumerate(_distinct_layouts(config, config.n_homes)):
        log, script = simulate_events(layout, config, i, label_map)
        homes.append(SynthHome(layout, log, script))
    return homes


def write_homes(homes: list[SynthHome], out_dir) -> list[dict]:
    """Write ``<home>.events.txt`` and ``<home>.layout.json`` per home; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for h in homes:
        events = out / f"{h.layout.home_id}.events.txt"
        layout = out / f"{h.layout.home_id}.layout.json"
        write_event_log(h.log, events)
        h.layout.write_json(layout)
        written.append({"home_id": h.layout.home_id, "events": str(events), "layout": str(layout)})
    return written


def load_synth_config(path) -> SynthConfig:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return SynthConfig.from_dict(data.get("synth", data))
