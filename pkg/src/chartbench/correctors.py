"""Rule-based drum post-processing: five targeted heuristics and the drum-stem arbiter.

Each rule maps a drums :class:`Track` to a new one. Rules never insert
events and never move them in time; they relabel or drop. Every rule is
iterated to a fixed point, so applying it twice changes nothing further.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, replace
from typing import Callable, Iterable

import numpy as np

from .audio import HOP, N_FFT, SAMPLE_RATE, AudioBuffer, OnsetEnvelope, resample_linear, stft_magnitude
from .model import (
    BLUE_CYM,
    GREEN_CYM,
    GREEN_TOM,
    KICK,
    RED,
    YELLOW_CYM,
    DrumLabel,
    Instrument,
    Lane,
    TimedEvent,
    Track,
)

RULES = ("arbiter", "streak_smooth", "roll_veto", "costack_veto", "kick_floor_tom", "fill_rescue")

BAND_EDGES = {"kick": (40.0, 120.0), "snare": (150.0, 400.0), "cymbal": (6000.0, 12000.0)}


@dataclass(frozen=True)
class CorrectorConfig:
    enabled: frozenset[str] = frozenset(RULES)
    sim_window: float = 0.025
    streak_min: int = 4
    streak_gap: float = 0.18
    roll_ioi: float = 0.12
    roll_len: int = 6
    fill_min_events: int = 6
    fill_ioi: float = 0.13
    fill_min_duration: float = 0.5
    fill_max_confidence: float = 0.5
    arbiter_alpha: float = 0.1

    def __post_init__(self):
        unknown = set(self.enabled) - set(RULES)
        if unknown:
            raise ValueError(f"unknown corrector rule(s): {', '.join(sorted(unknown))}")
        object.__setattr__(self, "enabled", frozenset(self.enabled))
        for name in ("sim_window", "streak_gap", "roll_ioi", "fill_ioi", "fill_min_duration", "arbiter_alpha"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("streak_min", "roll_len", "fill_min_events"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be at least 2")
        if not 0 < self.fill_max_confidence <= 1:
            raise ValueError("fill_max_confidence must lie in (0, 1]")

    def without(self, *rules: str) -> "CorrectorConfig":
        return replace(self, enabled=self.enabled - set(rules))


DEFAULT_CONFIG = CorrectorConfig()


@dataclass(frozen=True)
class StemBandEnergy:
    kick: np.ndarray
    snare: np.ndarray
    cymbal: np.ndarray
    hop: float = HOP / SAMPLE_RATE
    start_time: float = 0.0

    def __post_init__(self):
        for name in ("kick", "snare", "cymbal"):
            values = np.asarray(getattr(self, name), dtype=np.float64)
            if np.any(values < 0):
                raise ValueError("band energies must be non-negative")
            object.__setattr__(self, name, values)

    @classmethod
    def from_audio(cls, stem: AudioBuffer) -> "StemBandEnergy":
        """Per-frame STFT magnitude sums in the kick, snare and cymbal bands."""
        if stem.sample_rate != SAMPLE_RATE:
            stem = AudioBuffer(resample_linear(stem.samples, stem.sample_rate, SAMPLE_RATE), SAMPLE_RATE)
        mags = stft_magnitude(stem)
        freqs = np.fft.rfftfreq(N_FFT, 1.0 / SAMPLE_RATE)
        bands = {}
        for name, (lo, hi) in BAND_EDGES.items():
            sel = (freqs >= lo) & (freqs <= hi)
            bands[name] = mags[:, sel].sum(axis=1) if len(mags) else np.zeros(0)
        return cls(hop=HOP / SAMPLE_RATE, **bands)

    def band_for(self, label: DrumLabel) -> np.ndarray:
        if label.lane is Lane.KICK:
            return self.kick
        if label.lane is Lane.RED:
            return self.snare
        if label.cymbal:
            return self.cymbal
        return 0.5 * (self.kick + self.snare)


def _fixpoint(step: Callable[[list[TimedEvent]], list[TimedEvent] | None], events: Iterable[TimedEvent]):
    current = list(events)
    while True:
        nxt = step(current)
        if nxt is None:
            return current
        current = list(Track(Instrument.DRUMS, tuple(nxt)).events)


def _as_track(events) -> Track:
    if isinstance(events, Track):
        return events
    return Track(Instrument.DRUMS, tuple(events))


def _hand_indices(events: list[TimedEvent]) -> list[int]:
    return [i for i, ev in enumerate(events) if ev.label != KICK]


def _relabel(ev: TimedEvent, label: DrumLabel) -> TimedEvent:
    return replace(ev, label=label)


def streak_smooth(events, config: CorrectorConfig = DEFAULT_CONFIG) -> Track:
    """Relabel a lone odd event inside a streak of one class.

    Works on the hand stream (kicks excluded). An event whose neighbours
    both carry another class ``c`` is relabeled to ``c`` when the same-class
    run around it, counted backward and forward at gaps of at most
    ``streak_gap``, holds at least ``streak_min`` events. Events within
    ``sim_window`` of a neighbour are left alone.
    """
    def step(evs):
        hands = _hand_indices(evs)
        times = [evs[i].time for i in hands]
        labels = [evs[i].label for i in hands]
        for k in range(1, len(hands) - 1):
            target = labels[k - 1]
            if labels[k] == target or labels[k + 1] != target:
                continue
            gap_l, gap_r = times[k] - times[k - 1], times[k + 1] - times[k]
            if gap_l > config.streak_gap or gap_r > config.streak_gap:
                continue
            # chord members (e.g. snare stacked on a hat) are not outliers
            if gap_l <= config.sim_window or gap_r <= config.sim_window:
                continue
            back = 0
            j = k - 1
            while j >= 0 and labels[j] == target and (j == k - 1 or times[j + 1] - times[j] <= config.streak_gap):
                back += 1
                j -= 1
            fwd = 0
            j = k + 1
            while j < len(hands) and labels[j] == target and (j == k + 1 or times[j] - times[j - 1] <= config.streak_gap):
                fwd += 1
                j += 1
            if back + fwd >= config.streak_min:
                out = list(evs)
                out[hands[k]] = _relabel(evs[hands[k]], target)
                return out
        return None

    return _as_track(_fixpoint(step, _as_track(events).events))


def kick_floor_tom(events, config: CorrectorConfig = DEFAULT_CONFIG) -> Track:
    """Drop a green tom that coincides (within ``sim_window``) with a kick."""
    evs = list(_as_track(events).events)
    kicks = np.array([ev.time for ev in evs if ev.label == KICK])
    keep = []
    for ev in evs:
        if ev.label == GREEN_TOM and kicks.size and np.min(np.abs(kicks - ev.time)) <= config.sim_window + 1e-9:
            continue
        keep.append(ev)
    return _as_track(keep)


def roll_veto(events, config: CorrectorConfig = DEFAULT_CONFIG) -> Track:
    """Collapse fast red/yellow-cymbal alternation to its majority class.

    A maximal run of hand events alternating strictly between red and
    yellow cymbal, with every gap at most ``roll_ioi`` and at least
    ``roll_len`` events, is relabeled to the more frequent of the two
    (red on a tie).
    """
    pair = (RED, YELLOW_CYM)

    def step(evs):
        hands = _hand_indices(evs)
        k = 0
        while k < len(hands):
            if evs[hands[k]].label not in pair:
                k += 1
                continue
            j = k
            while (
                j + 1 < len(hands)
                and evs[hands[j + 1]].label in pair
                and evs[hands[j + 1]].label != evs[hands[j]].label
                and evs[hands[j + 1]].time - evs[hands[j]].time <= config.roll_ioi + 1e-9
            ):
                j += 1
            length = j - k + 1
            if length >= config.roll_len:
                reds = sum(evs[hands[i]].label == RED for i in range(k, j + 1))
                target = RED if reds * 2 >= length else YELLOW_CYM
                out = list(evs)
                for i in range(k, j + 1):
                    out[hands[i]] = _relabel(evs[hands[i]], target)
                return out
            k = j + 1
        return None

    return _as_track(_fixpoint(step, _as_track(events).events))


def costack_veto(events, config: CorrectorConfig = DEFAULT_CONFIG) -> Track:
    """Resolve a crash and a ride on the same onset to one cymbal.

    The higher-confidence event survives; the crash (green) wins ties.
    """
    def step(evs):
        times = [ev.time for ev in evs]
        limit = config.sim_window + 1e-9
        for i, ev in enumerate(evs):
            if ev.label != BLUE_CYM:
                continue
            j = bisect.bisect_left(times, ev.time - limit)
            while j < len(evs) and times[j] <= ev.time + limit:
                if evs[j].label == GREEN_CYM:
                    loser = i if evs[j].confidence >= ev.confidence else j
                    return evs[:loser] + evs[loser + 1:]
                j += 1
        return None

    return _as_track(_fixpoint(step, _as_track(events).events))


def _fill_spans(times: list[float], config: CorrectorConfig) -> list[tuple[int, int]]:
    spans = []
    start = 0
    for i in range(1, len(times) + 1):
        if i == len(times) or times[i] - times[i - 1] > config.fill_ioi + 1e-9:
            if i - start >= config.fill_min_events and times[i - 1] - times[start] >= config.fill_min_duration - 1e-9:
                spans.append((start, i - 1))
            start = i
    return spans


def fill_rescue(events, env: OnsetEnvelope | None = None, config: CorrectorConfig = DEFAULT_CONFIG) -> Track:
    """Turn low-confidence cymbals inside dense fills into toms.

    A fill is a run of at least ``fill_min_events`` events with gaps of at
    most ``fill_ioi`` lasting at least ``fill_min_duration``. Cymbals inside
    it with confidence below ``fill_max_confidence`` become the most recent
    tom lane seen earlier in the fill, or the floor tom if there is none.
    With an onset envelope, only events sitting on a non-zero envelope
    frame are touched.
    """
    evs = list(_as_track(events).events)
    times = [ev.time for ev in evs]
    out = list(evs)
    for lo, hi in _fill_spans(times, config):
        last_tom = None
        for i in range(lo, hi + 1):
            label = evs[i].label
            if label.is_tom:
                last_tom = label
                continue
            if not label.cymbal or evs[i].confidence >= config.fill_max_confidence:
                continue
            if env is not None and env.value_at(evs[i].time) <= 0:
                continue
            out[i] = _relabel(evs[i], last_tom or GREEN_TOM)
    return _as_track(out)


def arbiter(events, bands: StemBandEnergy, config: CorrectorConfig = DEFAULT_CONFIG) -> Track:
    """Fall back to the runner-up class when the predicted band is near silent.

    An event whose band energy (max over the nearest frame and its two
    neighbours) is below ``arbiter_alpha`` times that band's song median
    takes its runner-up label and confidence; the runner-up is consumed.
    """
    medians = {}
    out = []
    for ev in _as_track(events).events:
        if ev.runner_up is None:
            out.append(ev)
            continue
        band = bands.band_for(ev.label)
        if band.size == 0:
            out.append(ev)
            continue
        key = "tom" if ev.label.is_tom else ("cymbal" if ev.label.cymbal else ev.label.lane)
        if key not in medians:
            medians[key] = float(np.median(band))
        k = int(round((ev.time - bands.start_time) / bands.hop))
        local = band[max(k - 1, 0):k + 2]
        energy = float(local.max()) if local.size else 0.0
        if energy < config.arbiter_alpha * medians[key]:
            out.append(replace(ev, label=ev.runner_up, confidence=ev.runner_up_confidence,
                               runner_up=None, runner_up_confidence=0.0))
        else:
            out.append(ev)
    return _as_track(out)


def run_pipeline(
    events,
    config: CorrectorConfig = DEFAULT_CONFIG,
    env: OnsetEnvelope | None = None,
    bands: StemBandEnergy | None = None,
) -> Track:
    """Apply the enabled rules in the fixed production order.

    arbiter, streak_smooth, roll_veto, costack_veto, kick_floor_tom,
    fill_rescue. The arbiter is skipped when no band energies are given.
    """
    track = _as_track(events)
    on = config.enabled
    if "arbiter" in on and bands is not None:
        track = arbiter(track, bands, config)
    if "streak_smooth" in on:
        track = streak_smooth(track, config)
    if "roll_veto" in on:
        track = roll_veto(track, config)
    if "costack_veto" in on:
        track = costack_veto(track, config)
    if "kick_floor_tom" in on:
        track = kick_floor_tom(track, config)
    if "fill_rescue" in on:
        track = fill_rescue(track, env, config)
    return track
