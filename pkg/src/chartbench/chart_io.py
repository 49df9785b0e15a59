"""Clone Hero style ``notes.mid`` charts, prediction files and benchmark manifests."""

from __future__ import annotations

import json
import math
import warnings
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from . import smf
from .model import (
    Chart,
    ChartError,
    DrumLabel,
    Instrument,
    Lane,
    TempoMap,
    TimedEvent,
    Track,
    format_label,
    parse_label,
)

DEFAULT_RESOLUTION = 480
EXPERT_BASE = 96
TOM_MARKERS = {Lane.YELLOW: 110, Lane.BLUE: 111, Lane.GREEN: 112}
VOCAL_RANGE = (36, 84)
NOTE_VELOCITY = 100

GENRES = ("punk", "metal", "pop", "rock", "electronic", "hip-hop", "prog", "country")


class UnknownTrackWarning(UserWarning):
    pass


# -- MIDI charts ---------------------------------------------------------------------


def _pair_notes(events):
    """Yield ``(on_tick, off_tick, pitch)``; unterminated notes get zero length."""
    pending: dict[tuple[int, int], deque] = defaultdict(deque)
    out = []
    for tick, ev in events:
        if ev.kind == "note_on":
            pending[(ev.channel, ev.note)].append(tick)
        elif ev.kind == "note_off":
            queue = pending.get((ev.channel, ev.note))
            if queue:
                out.append((queue.popleft(), tick, ev.note))
    for (_, note), queue in pending.items():
        out.extend((t, t, note) for t in queue)
    out.sort()
    return out


def _track_name(events) -> str | None:
    for _, ev in events:
        if ev.kind == "meta" and ev.meta_type == smf.META_TRACK_NAME:
            return ev.data.decode("latin-1")
    return None


def _tempo_map(events) -> TempoMap:
    tempos: dict[int, int] = {}
    sigs: dict[int, tuple[int, int]] = {}
    for tick, ev in events:
        if ev.kind != "meta":
            continue
        if ev.meta_type == smf.META_SET_TEMPO and len(ev.data) == 3:
            tempos[tick] = int.from_bytes(ev.data, "big")
        elif ev.meta_type == smf.META_TIME_SIGNATURE and len(ev.data) >= 2:
            sigs[tick] = (ev.data[0], 2 ** ev.data[1])
    tempos.setdefault(0, 500_000)
    sigs.setdefault(0, (4, 4))
    return TempoMap(
        tuple(sorted(tempos.items())),
        tuple((t, n, d) for t, (n, d) in sorted(sigs.items())),
    )


def _sustain(tm: TempoMap, resolution: int, on: int, off: int) -> float:
    if off - on <= resolution // 12:
        return 0.0
    return tm.ticks_to_seconds(resolution, off) - tm.ticks_to_seconds(resolution, on)


def _decode_track(inst: Instrument, events, tm: TempoMap, resolution: int) -> Track:
    notes = _pair_notes(events)
    sec = lambda tick: tm.ticks_to_seconds(resolution, tick)  # noqa: E731
    out = []
    if inst is Instrument.DRUMS:
        markers = {lane: [(on, off) for on, off, p in notes if p == pitch] for lane, pitch in TOM_MARKERS.items()}
        for on, off, pitch in notes:
            if not EXPERT_BASE <= pitch <= EXPERT_BASE + 4:
                continue
            lane = Lane(pitch - EXPERT_BASE)
            cymbal = False
            if lane in TOM_MARKERS:
                cymbal = not any(a <= on < b for a, b in markers[lane])
            out.append(TimedEvent(sec(on), DrumLabel(lane, cymbal), _sustain(tm, resolution, on, off)))
    elif inst is Instrument.VOCALS:
        for on, off, pitch in notes:
            if VOCAL_RANGE[0] <= pitch <= VOCAL_RANGE[1]:
                out.append(TimedEvent(sec(on), pitch, _sustain(tm, resolution, on, off)))
    else:
        for on, off, pitch in notes:
            if EXPERT_BASE <= pitch <= EXPERT_BASE + 4:
                out.append(TimedEvent(sec(on), pitch - EXPERT_BASE, _sustain(tm, resolution, on, off)))
    return Track(inst, tuple(out))


def parse_chart_midi(data: bytes) -> Chart:
    """Decode the Expert tier of every ``PART *`` track in a chart MIDI file.

    Tempo and time-signature meta events are taken from the first track.
    Tracks with unrecognised names are skipped with an
    :class:`UnknownTrackWarning`. Raises :class:`smf.MidiParseError` (carrying
    the byte offset) on malformed input.
    """
    mf = smf.read_midi(data)
    if not mf.tracks:
        return Chart({}, TempoMap(), mf.division)
    tm = _tempo_map(mf.tracks[0])
    tracks = {}
    for index, events in enumerate(mf.tracks):
        name = _track_name(events)
        inst = Instrument.from_track_name(name) if name is not None else None
        if inst is None:
            if index > 0 or mf.format == 0:
                if any(ev.kind == "note_on" for _, ev in events):
                    warnings.warn(f"ignoring track {index} ({name!r})", UnknownTrackWarning, stacklevel=2)
            continue
        if inst in tracks:
            warnings.warn(f"duplicate {name!r} track {index} ignored", UnknownTrackWarning, stacklevel=2)
            continue
        tracks[inst] = _decode_track(inst, events, tm, mf.division)
    return Chart(tracks, tm, mf.division)


def _pitch(inst: Instrument, label) -> int:
    if inst is Instrument.DRUMS:
        return EXPERT_BASE + int(label.lane)
    if inst is Instrument.VOCALS:
        return int(label)
    return EXPERT_BASE + int(label)


def _to_tick(tm: TempoMap, resolution: int, seconds: float) -> int:
    try:
        tick = tm.seconds_to_ticks(resolution, seconds)
    except ChartError as exc:
        raise ChartError(f"cannot place event at {seconds!r} s: {exc}") from None
    if tick > smf.MAX_VLQ:
        raise ChartError(f"event at {seconds} s lies beyond the representable tick range")
    return tick


def _encode_track(track: Track, tm: TempoMap, resolution: int) -> list[tuple[int, smf.MidiEvent]]:
    inst = track.instrument
    min_len = max(resolution // 12, 1)
    # (on, end, pitch) with sustain-derived ends; clipped below
    notes: dict[int, list[list[int]]] = defaultdict(list)
    seen: dict[tuple[int, int], bool] = {}
    for ev in track.events:
        on = _to_tick(tm, resolution, ev.time)
        end = _to_tick(tm, resolution, ev.time + ev.sustain) if ev.sustain > 0 else on
        pitch = _pitch(inst, ev.label)
        cymbal = isinstance(ev.label, DrumLabel) and ev.label.cymbal
        prior = seen.get((pitch, on))
        if prior is not None:
            if prior != cymbal:
                raise ChartError(f"{inst.value}: tom and cymbal on one pad at tick {on}")
            continue
        seen[(pitch, on)] = cymbal
        notes[pitch].append([on, max(end, on + min_len) if end - on <= min_len else end, int(cymbal)])

    msgs: list[tuple[int, int, int, smf.MidiEvent]] = []
    for pitch, items in notes.items():
        items.sort()
        for i, (on, end, _) in enumerate(items):
            if i + 1 < len(items):
                end = min(end, items[i + 1][0])
            msgs.append((on, 2, pitch, smf.MidiEvent("note_on", 0, pitch, NOTE_VELOCITY)))
            msgs.append((end, 1, pitch, smf.MidiEvent("note_off", 0, pitch, 0)))
    if inst is Instrument.DRUMS:
        for lane, marker in TOM_MARKERS.items():
            pad = sorted(notes.get(EXPERT_BASE + int(lane), []))
            spans: list[list[int]] = []
            for i, (on, end, cym) in enumerate(pad):
                if cym:
                    continue
                stop = on + min_len
                if i + 1 < len(pad):
                    stop = min(stop, pad[i + 1][0]) if pad[i + 1][2] else stop
                if spans and on <= spans[-1][1]:
                    spans[-1][1] = max(spans[-1][1], stop)
                else:
                    spans.append([on, stop])
            for on, stop in spans:
                msgs.append((on, 2, marker, smf.MidiEvent("note_on", 0, marker, NOTE_VELOCITY)))
                msgs.append((stop, 1, marker, smf.MidiEvent("note_off", 0, marker, 0)))
    msgs.sort(key=lambda m: m[:3])
    return [(0, smf.track_name_event(inst.track_name))] + [(tick, ev) for tick, _, _, ev in msgs]


def emit_chart_midi(chart: Chart) -> bytes:
    """Serialize ``chart`` as a format-1 SMF; identical charts give identical bytes.

    Event times are rounded to the nearest tick. Sustains of at most 1/12
    beat become minimum-length notes, which parse back as sustain 0.
    """
    tm, res = chart.tempo_map, chart.resolution
    conductor = []
    for tick, uspq in tm.segments:
        conductor.append((tick, 0, smf.tempo_event(uspq)))
    for tick, num, den in tm.time_signatures:
        conductor.append((tick, 1, smf.time_signature_event(num, den)))
    conductor.sort(key=lambda m: m[:2])
    tracks = [[(tick, ev) for tick, _, ev in conductor]]
    for inst, track in chart.tracks.items():
        tracks.append(_encode_track(track, tm, res))
    try:
        return smf.write_midi(smf.MidiFile(1, res, tracks))
    except ValueError as exc:
        raise ChartError(str(exc)) from None


def quantize_chart(chart: Chart) -> Chart:
    """Snap every event onto the chart's tick grid, as emission would."""
    return parse_chart_midi(emit_chart_midi(chart))


# -- prediction files ----------------------------------------------------------------


def format_prediction_file(track: Track) -> str:
    """Tab-separated ``time_s  label  confidence`` lines.

    Runner-up label/confidence and sustain columns are appended only when
    some event carries them.
    """
    wide = any(ev.runner_up is not None or ev.sustain > 0 for ev in track.events)
    lines = [f"# instrument: {track.instrument.value}"]
    for ev in track.events:
        cols = [repr(float(ev.time)), format_label(ev.label), repr(float(ev.confidence))]
        if wide:
            cols += [
                "-" if ev.runner_up is None else format_label(ev.runner_up),
                repr(float(ev.runner_up_confidence)),
                repr(float(ev.sustain)),
            ]
        lines.append("\t".join(cols))
    return "\n".join(lines) + "\n"


def parse_prediction_file(text: str, instrument: Instrument | str | None = None) -> Track:
    inst = Instrument(instrument) if instrument is not None else None
    events = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            if key.strip() == "instrument" and inst is None:
                inst = Instrument(value.strip())
            continue
        if inst is None:
            raise ChartError("prediction file does not name its instrument")
        cols = line.split("\t")
        if len(cols) not in (3, 6):
            raise ChartError(f"line {lineno}: expected 3 or 6 tab-separated columns, got {len(cols)}")
        try:
            time, conf = float(cols[0]), float(cols[2])
            runner_up, ru_conf, sustain = None, 0.0, 0.0
            if len(cols) == 6:
                runner_up = None if cols[3] == "-" else parse_label(cols[3], inst)
                ru_conf, sustain = float(cols[4]), float(cols[5])
            events.append(TimedEvent(time, parse_label(cols[1], inst), sustain, conf, runner_up, ru_conf))
        except (ValueError, ChartError) as exc:
            raise ChartError(f"line {lineno}: {exc}") from None
    if inst is None:
        raise ChartError("prediction file does not name its instrument")
    return Track(inst, tuple(events))


def load_prediction_chart(pred_dir: Path, song_id: str) -> Chart:
    """Load predictions for one song.

    Accepts ``<song_id>.mid``, ``<song_id>/notes.mid`` or a directory of
    ``<song_id>/<instrument>.tsv`` files.
    """
    pred_dir = Path(pred_dir)
    for candidate in (pred_dir / f"{song_id}.mid", pred_dir / song_id / "notes.mid"):
        if candidate.is_file():
            return parse_chart_midi(candidate.read_bytes())
    song_dir = pred_dir / song_id
    tracks = {}
    if song_dir.is_dir():
        for inst in Instrument:
            path = song_dir / f"{inst.value}.tsv"
            if path.is_file():
                tracks[inst] = parse_prediction_file(path.read_text(encoding="utf-8"), inst)
    if not tracks:
        raise FileNotFoundError(f"no predictions for {song_id!r} under {pred_dir}")
    return Chart(tracks)


def write_prediction_dir(chart: Chart, song_dir: Path) -> None:
    song_dir = Path(song_dir)
    song_dir.mkdir(parents=True, exist_ok=True)
    for inst, track in chart.tracks.items():
        (song_dir / f"{inst.value}.tsv").write_text(format_prediction_file(track), encoding="utf-8")


# -- manifest ------------------------------------------------------------------------


class ManifestError(ValueError):
    pass


_REQUIRED = ("song_id", "title", "artist", "genre", "mix_audio_path", "drum_stem_path", "gt_chart_path")


@dataclass
class ManifestEntry:
    song_id: str
    title: str
    artist: str
    genre: str
    mix_audio_path: str
    drum_stem_path: str
    gt_chart_path: str
    passed_screen: bool | None = None
    median_drum_rms: float | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        doc = {key: getattr(self, key) for key in _REQUIRED}
        doc["passed_screen"] = self.passed_screen
        doc["median_drum_rms"] = self.median_drum_rms
        doc.update(self.extra)
        return doc

    @classmethod
    def from_dict(cls, doc: dict[str, Any], index: int = 0) -> "ManifestEntry":
        ident = doc.get("song_id", f"#{index}")
        missing = [key for key in _REQUIRED if key not in doc]
        if missing:
            raise ManifestError(f"manifest entry {ident}: missing required field(s) {', '.join(missing)}")
        for key in _REQUIRED:
            if not isinstance(doc[key], str) or not doc[key]:
                raise ManifestError(f"manifest entry {ident}: field {key!r} must be a non-empty string")
        if doc["genre"] not in GENRES:
            raise ManifestError(f"manifest entry {ident}: genre {doc['genre']!r} not one of {', '.join(GENRES)}")
        passed = doc.get("passed_screen")
        if passed is not None and not isinstance(passed, bool):
            raise ManifestError(f"manifest entry {ident}: passed_screen must be boolean or null")
        rms = doc.get("median_drum_rms")
        if rms is not None and (isinstance(rms, bool) or not isinstance(rms, (int, float)) or not math.isfinite(rms)):
            raise ManifestError(f"manifest entry {ident}: median_drum_rms must be a finite number or null")
        known = set(_REQUIRED) | {"passed_screen", "median_drum_rms"}
        return cls(
            **{key: doc[key] for key in _REQUIRED},
            passed_screen=passed,
            median_drum_rms=None if rms is None else float(rms),
            extra={k: v for k, v in doc.items() if k not in known},
        )


def parse_manifest(text: str) -> list[ManifestEntry]:
    """Validate a JSON manifest: a list of entries or ``{"songs": [...]}``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from None
    if isinstance(doc, dict):
        doc = doc.get("songs")
    if not isinstance(doc, list):
        raise ManifestError("manifest must be a list of entries or an object with a 'songs' list")
    entries = []
    seen = set()
    for i, item in enumerate(doc):
        if not isinstance(item, dict):
            raise ManifestError(f"manifest entry #{i} is not an object")
        entry = ManifestEntry.from_dict(item, i)
        if entry.song_id in seen:
            raise ManifestError(f"manifest entry {entry.song_id}: duplicate song_id")
        seen.add(entry.song_id)
        entries.append(entry)
    return entries


def dump_manifest(entries: Iterable[ManifestEntry]) -> str:
    return json.dumps({"songs": [e.to_dict() for e in entries]}, indent=2) + "\n"


def genre_counts(entries: Iterable[ManifestEntry]) -> dict[str, int]:
    counts = dict.fromkeys(GENRES, 0)
    for e in entries:
        counts[e.genre] += 1
    return {g: n for g, n in counts.items() if n}
