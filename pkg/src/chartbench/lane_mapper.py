"""Five-fret lane assignment for guitar and bass from note-segmented pitch.

Frets follow scale degree relative to a running tonic estimate, with a
post-pass that keeps fret motion in the same direction as pitch motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .model import ChartError, Instrument, TimedEvent, Track

PITCH_RANGE = (24.0, 96.0)
TONIC_WINDOW = 16
N_FRETS = 5

# semitone above the tonic -> diatonic degree (major scale; chromatic notes
# share the degree below them)
DEGREE = (0, 0, 1, 1, 2, 3, 3, 4, 4, 5, 5, 6)


@dataclass(frozen=True)
class PitchedNote:
    time: float
    midi_pitch: float
    duration: float = 0.0

    def __post_init__(self):
        if not PITCH_RANGE[0] <= self.midi_pitch <= PITCH_RANGE[1]:
            raise ChartError(f"pitch {self.midi_pitch} outside {PITCH_RANGE}")
        if not math.isfinite(self.time) or self.time < 0 or self.duration < 0:
            raise ChartError("note time and duration must be non-negative")


def running_tonic(notes: Sequence[PitchedNote], window: int = TONIC_WINDOW) -> list[int]:
    """Pitch class with the most duration over the trailing ``window`` notes.

    The first ``window`` notes all use the histogram of the first
    ``window`` notes. Ties go to the lower pitch class; when every duration
    in a window is zero, notes are counted instead.
    """
    if window < 1:
        raise ValueError("window must be positive")
    pcs = [int(round(n.midi_pitch)) % 12 for n in notes]
    out = []
    for i in range(len(notes)):
        lo, hi = (0, min(window, len(notes))) if i < window else (i - window + 1, i + 1)
        hist = [0.0] * 12
        for j in range(lo, hi):
            hist[pcs[j]] += notes[j].duration
        if not any(hist):
            for j in range(lo, hi):
                hist[pcs[j]] += 1.0
        out.append(max(range(12), key=lambda pc: (hist[pc], -pc)))
    return out


def raw_fret(pitch: int, tonic: int) -> int:
    d = (pitch - tonic) % 12
    return min(max(DEGREE[d] * N_FRETS // 7, 0), N_FRETS - 1)


def map_to_lanes(notes: Sequence[PitchedNote], tonics: Sequence[int]) -> list[tuple[float, int, float]]:
    """``(time, fret, sustain)`` for each note.

    Repeated pitches repeat the fret. When the degree-based fret moves
    against the pitch (e.g. wrapping past the octave), it is replaced by one
    step from the previous fret in the pitch's direction, clamped to 0-4.
    """
    if len(notes) != len(tonics):
        raise ValueError("need one tonic per note")
    out: list[tuple[float, int, float]] = []
    prev_pitch = prev_fret = None
    for note, tonic in zip(notes, tonics):
        pitch = int(round(note.midi_pitch))
        fret = raw_fret(pitch, tonic)
        if prev_pitch is not None:
            if pitch == prev_pitch:
                fret = prev_fret
            elif pitch > prev_pitch and fret < prev_fret:
                fret = min(prev_fret + 1, N_FRETS - 1)
            elif pitch < prev_pitch and fret > prev_fret:
                fret = max(prev_fret - 1, 0)
        out.append((note.time, fret, note.duration))
        prev_pitch, prev_fret = pitch, fret
    return out


def lanes_track(notes: Sequence[PitchedNote], instrument: Instrument = Instrument.GUITAR, window: int = TONIC_WINDOW) -> Track:
    mapped = map_to_lanes(notes, running_tonic(notes, window))
    return Track(instrument, tuple(TimedEvent(t, fret, sustain) for t, fret, sustain in mapped))


def parse_pitched_notes(text: str) -> list[PitchedNote]:
    """Tab-separated ``time_s  midi_pitch  duration_s`` lines; ``#`` starts a comment."""
    notes = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (2, 3):
            raise ChartError(f"line {lineno}: expected time, pitch and optional duration")
        try:
            notes.append(PitchedNote(float(cols[0]), float(cols[1]), float(cols[2]) if len(cols) == 3 else 0.0))
        except ValueError as exc:
            raise ChartError(f"line {lineno}: {exc}") from None
    notes.sort(key=lambda n: n.time)
    return notes
