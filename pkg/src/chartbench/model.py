"""Instrument-agnostic note-event model shared by every other module.

Times are seconds (float64). Ticks only appear at the MIDI boundary, via
:class:`TempoMap`.
"""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union


class ChartError(ValueError):
    """Raised when a chart, track or tempo map violates its invariants."""


class TempoMapError(ChartError):
    pass


class Instrument(str, enum.Enum):
    DRUMS = "drums"
    GUITAR = "guitar"
    BASS = "bass"
    VOCALS = "vocals"
    KEYS = "keys"

    @property
    def track_name(self) -> str:
        return "PART " + self.value.upper()

    @classmethod
    def from_track_name(cls, name: str) -> "Instrument | None":
        for inst in cls:
            if inst.track_name == name.strip():
                return inst
        return None


INSTRUMENT_ORDER = tuple(Instrument)


class Lane(enum.IntEnum):
    KICK = 0
    RED = 1
    YELLOW = 2
    BLUE = 3
    GREEN = 4


@dataclass(frozen=True, order=True)
class DrumLabel:
    """One of the seven drum classes: a pad plus the tom/cymbal marker."""

    lane: Lane
    cymbal: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lane", Lane(self.lane))
        if self.lane in (Lane.KICK, Lane.RED) and self.cymbal:
            raise ChartError(f"{self.lane.name} cannot carry a cymbal marker")

    @property
    def is_tom(self) -> bool:
        return self.lane in (Lane.YELLOW, Lane.BLUE, Lane.GREEN) and not self.cymbal

    def __str__(self) -> str:
        name = self.lane.name.lower()
        if self.lane in (Lane.KICK, Lane.RED):
            return name
        return name + ("_cym" if self.cymbal else "_tom")

    @classmethod
    def parse(cls, text: str) -> "DrumLabel":
        """Parse ``kick``, ``red``, ``yellow_cym``, ``blue_tom`` and friends.

        A bare ``yellow``/``blue``/``green`` is a cymbal, mirroring the MIDI
        convention where pads are cymbals unless a tom marker is active.
        """
        key = text.strip().lower()
        base, _, suffix = key.partition("_")
        try:
            lane = Lane[base.upper()]
        except KeyError:
            raise ChartError(f"unknown drum label {text!r}") from None
        if lane in (Lane.KICK, Lane.RED):
            if suffix:
                raise ChartError(f"unknown drum label {text!r}")
            return cls(lane)
        if suffix not in ("", "cym", "tom"):
            raise ChartError(f"unknown drum label {text!r}")
        return cls(lane, suffix != "tom")


KICK = DrumLabel(Lane.KICK)
RED = DrumLabel(Lane.RED)
YELLOW_CYM = DrumLabel(Lane.YELLOW, True)
YELLOW_TOM = DrumLabel(Lane.YELLOW, False)
BLUE_CYM = DrumLabel(Lane.BLUE, True)
BLUE_TOM = DrumLabel(Lane.BLUE, False)
GREEN_CYM = DrumLabel(Lane.GREEN, True)
GREEN_TOM = DrumLabel(Lane.GREEN, False)
DRUM_CLASSES = (KICK, RED, YELLOW_CYM, YELLOW_TOM, BLUE_CYM, BLUE_TOM, GREEN_CYM, GREEN_TOM)

Label = Union[DrumLabel, int]


def label_sort_key(label: Label) -> tuple:
    if isinstance(label, DrumLabel):
        return (0, int(label.lane), label.cymbal)
    return (1, int(label), False)


def lane_of(label: Label) -> int:
    """Pad/fret index used for lane accuracy; drops the tom/cymbal marker."""
    if isinstance(label, DrumLabel):
        return int(label.lane)
    return int(label)


def format_label(label: Label) -> str:
    return str(label)


def parse_label(text: str, instrument: Instrument) -> Label:
    if instrument is Instrument.DRUMS:
        return DrumLabel.parse(text)
    try:
        value = int(text)
    except ValueError:
        raise ChartError(f"label {text!r} is not an integer for {instrument.value}") from None
    if instrument is not Instrument.VOCALS and not 0 <= value <= 4:
        raise ChartError(f"fret {value} outside 0-4")
    if instrument is Instrument.VOCALS and not 0 <= value <= 127:
        raise ChartError(f"vocal pitch {value} outside MIDI range")
    return value


@dataclass(frozen=True)
class TimedEvent:
    time: float
    label: Label
    sustain: float = 0.0
    confidence: float = 1.0
    # second-best class from the upstream classifier; consumed by the arbiter
    runner_up: Label | None = None
    runner_up_confidence: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.time) or self.time < 0:
            raise ChartError(f"event time must be finite and >= 0, got {self.time}")
        if not math.isfinite(self.sustain) or self.sustain < 0:
            raise ChartError(f"sustain must be >= 0, got {self.sustain}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ChartError(f"confidence must lie in [0, 1], got {self.confidence}")
        if not 0.0 <= self.runner_up_confidence <= 1.0:
            raise ChartError("runner-up confidence must lie in [0, 1]")

    def sort_key(self) -> tuple:
        return (self.time, label_sort_key(self.label))


def normalize_events(events: Iterable[TimedEvent]) -> tuple[TimedEvent, ...]:
    """Sort by (time, label) and collapse duplicates, keeping max confidence."""
    best: dict[tuple, TimedEvent] = {}
    for ev in events:
        key = (ev.time, ev.label)
        kept = best.get(key)
        if kept is None or ev.confidence > kept.confidence:
            best[key] = ev
    return tuple(sorted(best.values(), key=TimedEvent.sort_key))


@dataclass(frozen=True)
class Track:
    """Time-sorted, duplicate-free event list for one instrument."""

    instrument: Instrument
    events: tuple[TimedEvent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "instrument", Instrument(self.instrument))
        object.__setattr__(self, "events", normalize_events(self.events))

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @property
    def times(self) -> list[float]:
        return [ev.time for ev in self.events]

    @property
    def labels(self) -> list[Label]:
        return [ev.label for ev in self.events]

    def replace_events(self, events: Iterable[TimedEvent]) -> "Track":
        return Track(self.instrument, tuple(events))


@dataclass(frozen=True)
class TempoMap:
    """Tempo segments ``(start_tick, microseconds_per_quarter)`` plus time signatures.

    Time signatures are ``(start_tick, numerator, denominator)`` with the
    denominator as a plain note value (4 for quarter notes).
    """

    segments: tuple[tuple[int, int], ...] = ((0, 500_000),)
    time_signatures: tuple[tuple[int, int, int], ...] = ((0, 4, 4),)

    def __post_init__(self):
        segs = tuple((int(t), int(u)) for t, u in self.segments)
        sigs = tuple((int(t), int(n), int(d)) for t, n, d in self.time_signatures)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "time_signatures", sigs)
        if not segs or segs[0][0] != 0:
            raise TempoMapError("tempo map needs a segment starting at tick 0")
        for (t0, _), (t1, _) in zip(segs, segs[1:]):
            if t1 <= t0:
                raise TempoMapError("tempo segment start ticks must strictly increase")
        for _, uspq in segs:
            if not 0 < uspq < 2**24:
                raise TempoMapError(f"microseconds per quarter out of range: {uspq}")
        for i, (t, n, d) in enumerate(sigs):
            if t < 0 or n <= 0 or d <= 0 or d & (d - 1):
                raise TempoMapError(f"invalid time signature {(t, n, d)}")
            if i and t <= sigs[i - 1][0]:
                raise TempoMapError("time signature ticks must strictly increase")

    @classmethod
    def constant(cls, bpm: float) -> "TempoMap":
        return cls(((0, round(60_000_000 / bpm)),))

    def _starts_seconds(self, resolution: int) -> list[float]:
        starts = [0.0]
        for (t0, u0), (t1, _) in zip(self.segments, self.segments[1:]):
            starts.append(starts[-1] + (t1 - t0) * u0 / (1e6 * resolution))
        return starts

    def ticks_to_seconds(self, resolution: int, tick: int) -> float:
        if tick < 0:
            raise ChartError(f"tick must be >= 0, got {tick}")
        if resolution <= 0:
            raise ChartError("resolution must be positive")
        starts = self._starts_seconds(resolution)
        i = bisect.bisect_right([t for t, _ in self.segments], tick) - 1
        t0, uspq = self.segments[i]
        return starts[i] + (tick - t0) * uspq / (1e6 * resolution)

    def seconds_to_ticks(self, resolution: int, seconds: float) -> int:
        """Nearest tick to ``seconds`` (inverse of :meth:`ticks_to_seconds`)."""
        if not math.isfinite(seconds) or seconds < 0:
            raise ChartError(f"time must be finite and >= 0, got {seconds}")
        if resolution <= 0:
            raise ChartError("resolution must be positive")
        starts = self._starts_seconds(resolution)
        i = bisect.bisect_right(starts, seconds) - 1
        t0, uspq = self.segments[i]
        tick = t0 + round((seconds - starts[i]) * 1e6 * resolution / uspq)
        return max(int(tick), 0)

    def bpm_at_tick(self, tick: int) -> float:
        i = bisect.bisect_right([t for t, _ in self.segments], tick) - 1
        return 60_000_000 / self.segments[i][1]


def ticks_to_seconds(tm: TempoMap, resolution: int, tick: int) -> float:
    return tm.ticks_to_seconds(resolution, tick)


def seconds_to_ticks(tm: TempoMap, resolution: int, seconds: float) -> int:
    return tm.seconds_to_ticks(resolution, seconds)


@dataclass(frozen=True)
class Chart:
    tracks: Mapping[Instrument, Track] = field(default_factory=dict)
    tempo_map: TempoMap = field(default_factory=TempoMap)
    resolution: int = 480

    def __post_init__(self):
        if isinstance(self.resolution, bool) or int(self.resolution) != self.resolution or self.resolution <= 0:
            raise ChartError(f"resolution must be a positive integer, got {self.resolution}")
        tracks = {}
        for key, track in dict(self.tracks).items():
            inst = Instrument(key)
            if track.instrument is not inst:
                raise ChartError(f"track for {inst.value} holds {track.instrument.value} events")
            tracks[inst] = track
        ordered = {inst: tracks[inst] for inst in INSTRUMENT_ORDER if inst in tracks}
        object.__setattr__(self, "tracks", ordered)

    def __eq__(self, other):
        if not isinstance(other, Chart):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and self.tempo_map == other.tempo_map
            and dict(self.tracks) == dict(other.tracks)
        )

    __hash__ = None  # type: ignore[assignment]

    def track(self, instrument: Instrument | str) -> Track:
        inst = Instrument(instrument)
        return self.tracks.get(inst, Track(inst))

    def with_track(self, track: Track) -> "Chart":
        tracks = dict(self.tracks)
        tracks[track.instrument] = track
        return Chart(tracks, self.tempo_map, self.resolution)
