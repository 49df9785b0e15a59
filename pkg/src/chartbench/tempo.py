"""Global tempo, phase-coherence refinement and mid-song tempo changes.

Everything works from the drum-stem onset envelope: a coarse BPM from its
autocorrelation, then a 0.1 BPM grid search that maximises the weighted
resultant length of picked-peak phases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .audio import OnsetEnvelope, pick_peaks

BPM_RANGE = (60.0, 200.0)
REFINE_SPAN = 5.0
REFINE_STEP = 0.1
CHANGE_THRESHOLD = 3.0
CHANGE_BEATS = 8
MIN_ENVELOPE_SECONDS = 10.0
OCTAVE_RATIO = 0.5


class TempoError(ValueError):
    pass


@dataclass(frozen=True)
class TempoEstimate:
    bpm: float
    coherence: float
    phase: float

    def __post_init__(self):
        if not self.bpm > 0:
            raise TempoError("bpm must be positive")


def _acf(values: np.ndarray) -> np.ndarray:
    x = values - values.mean()
    n = len(x)
    size = 1 << (2 * n - 1).bit_length()
    spectrum = np.fft.rfft(x, size)
    full = np.fft.irfft(spectrum * np.conj(spectrum), size)[:n]
    # unbiased: long lags are not penalised for their shorter overlap
    return full / (n - np.arange(n))


def _interp_peak(acf: np.ndarray, lag: int) -> float:
    if 0 < lag < len(acf) - 1:
        a, b, c = acf[lag - 1], acf[lag], acf[lag + 1]
        denom = a - 2 * b + c
        if denom < 0:
            return lag + 0.5 * (a - c) / denom
    return float(lag)


def estimate_bpm_coarse(env: OnsetEnvelope) -> float:
    """Autocorrelation tempo in 60-200 BPM with an octave check.

    The best lag in range is replaced by its half (double tempo) whenever the
    half lag is itself a local peak holding at least half the autocorrelation
    of the original, so that a pulse at 120 BPM is not reported as 60.
    """
    v = np.asarray(env.values, dtype=np.float64)
    if len(v) * env.hop < MIN_ENVELOPE_SECONDS:
        raise TempoError(f"need at least {MIN_ENVELOPE_SECONDS:.0f} s of envelope")
    if not np.any(v > 0):
        raise TempoError("envelope is all zero: no rhythmic content")
    acf = _acf(v)
    lo = int(math.floor(60.0 / BPM_RANGE[1] / env.hop))
    hi = int(math.ceil(60.0 / BPM_RANGE[0] / env.hop))
    hi = min(hi, len(acf) - 2)
    if hi <= lo:
        raise TempoError("envelope too short for the tempo range")
    lag = lo + int(np.argmax(acf[lo:hi + 1]))
    while True:
        half = int(round(lag / 2))
        if half < lo:
            break
        cand = max(range(max(half - 1, 1), half + 2), key=lambda k: acf[k])
        if acf[cand] >= OCTAVE_RATIO * acf[lag] and acf[cand] >= acf[cand - 1] and acf[cand] >= acf[cand + 1]:
            lag = cand
        else:
            break
    bpm = 60.0 / (_interp_peak(acf, lag) * env.hop)
    return float(min(max(bpm, BPM_RANGE[0]), BPM_RANGE[1]))


def phase_coherence(onset_times, weights, bpm: float) -> tuple[float, float]:
    """Weighted mean resultant length of beat phases.

    Each onset ``t`` maps to phase ``2*pi*frac(t * bpm / 60)``; returns
    ``(R, phase)`` with ``R`` in [0, 1] and ``phase`` in [0, 2*pi).
    """
    t = np.asarray(onset_times, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if t.size == 0:
        raise TempoError("no onsets")
    if w.shape != t.shape:
        raise TempoError("onset_times and weights differ in length")
    if np.any(w < 0):
        raise TempoError("weights must be non-negative")
    total = w.sum()
    if not total > 0:
        raise TempoError("total weight is zero")
    beats = t * bpm / 60.0
    theta = 2 * np.pi * (beats - np.floor(beats))
    s = np.sum(w * np.exp(1j * theta))
    r = min(abs(s) / total, 1.0)
    phase = float(np.angle(s)) % (2 * np.pi)
    return float(r), phase


def _grid(center: float) -> np.ndarray:
    k = np.arange(-round(REFINE_SPAN / REFINE_STEP), round(REFINE_SPAN / REFINE_STEP) + 1)
    bpms = np.round(center + k * REFINE_STEP, 10)
    return bpms[bpms > 0]


def refine_peaks(times, weights, center: float) -> TempoEstimate:
    """Grid search ``center +/- 5`` BPM in 0.1 steps over given onsets.

    Ties go to the grid point nearest ``center``, then the lower BPM.
    """
    best = None
    for bpm in _grid(center):
        r, phase = phase_coherence(times, weights, float(bpm))
        key = (-round(r, 12), round(abs(bpm - center), 10), bpm)
        if best is None or key < best[0]:
            best = (key, TempoEstimate(float(bpm), r, phase))
    return best[1]


def onset_peaks(env: OnsetEnvelope) -> tuple[np.ndarray, np.ndarray]:
    times = pick_peaks(env)
    weights = np.array([env.value_at(t) for t in times])
    return times, weights


def refine_bpm(env: OnsetEnvelope, coarse_bpm: float) -> TempoEstimate:
    times, weights = onset_peaks(env)
    return refine_peaks(times, weights, coarse_bpm)


def estimate_tempo(env: OnsetEnvelope) -> TempoEstimate:
    return refine_bpm(env, estimate_bpm_coarse(env))


def _settle(times, weights, seed: float, rounds: int = 4) -> TempoEstimate:
    est = refine_peaks(times, weights, seed)
    for _ in range(rounds):
        nxt = refine_peaks(times, weights, est.bpm)
        if nxt.bpm == est.bpm:
            break
        est = nxt
    return est


def _ioi_candidates(times: np.ndarray) -> list[float]:
    """Octave multiples, within the tempo range, of the median inter-onset tempo."""
    gaps = np.diff(times)
    gaps = gaps[gaps > 1e-6]
    if gaps.size == 0:
        return []
    base = 60.0 / float(np.median(gaps))
    return [base * 2.0 ** k for k in range(-3, 4) if BPM_RANGE[0] <= base * 2.0 ** k <= BPM_RANGE[1]]


def _local_tempo(times, weights, running: float) -> TempoEstimate:
    """Tempo of one window.

    Searches near ``running`` and, for jumps beyond the refinement span,
    near each octave of the window's own inter-onset tempo. The most
    coherent wins; ties go to the estimate closest to ``running`` in ratio.
    """
    found = [refine_peaks(times, weights, running)]
    for seed in _ioi_candidates(times):
        if abs(seed - running) > REFINE_SPAN:
            found.append(_settle(times, weights, seed))
    return min(found, key=lambda e: (-round(e.coherence, 9), abs(math.log(e.bpm / running))))


def _phase_error(times: np.ndarray, bpm: float, phase: float) -> np.ndarray:
    theta = 2 * np.pi * times * bpm / 60.0 - phase
    return 1.0 - np.cos(theta)


def _locate_change(times, weights, old: TempoEstimate, new: TempoEstimate) -> int:
    """Index of the first onset that fits the new beat grid better than the old."""
    old_cost = weights * _phase_error(times, old.bpm, old.phase)
    new_cost = weights * _phase_error(times, new.bpm, new.phase)
    # cost of splitting before onset i: old grid on [0, i), new grid on [i, n)
    split = np.concatenate(([0.0], np.cumsum(old_cost))) + np.concatenate((np.cumsum(new_cost[::-1])[::-1], [0.0]))
    return int(np.argmin(split))


def detect_tempo_changes(env: OnsetEnvelope, global_estimate: TempoEstimate) -> list[tuple[float, float]]:
    """Tempo changes of more than 3 BPM that hold for at least 8 beats.

    An 8-beat window slides one beat at a time, re-estimating local tempo
    around the running estimate (and around the window's own inter-onset
    tempo, for large jumps). The running estimate starts from the opening
    window rather than the global one. When a window deviates, the new tempo is
    settled from that window, the change point is placed at the onset where
    the new beat grid starts fitting better than the old one, and the change
    is kept only if the 8 beats from there still deviate.
    """
    times, weights = onset_peaks(env)
    if times.size == 0:
        return []
    return _detect_changes(times, weights, global_estimate)


def _in_window(times, start, length):
    return (times >= start - 1e-9) & (times < start + length - 1e-9)


def _detect_changes(times: np.ndarray, weights: np.ndarray, global_estimate: TempoEstimate):
    changes: list[tuple[float, float]] = []
    running = global_estimate.bpm
    segment_start = float(times[0])
    t = float(times[0])
    end = float(times[-1])
    # the global tempo of a song with a change sits between its segments;
    # start from the opening tempo so the song's first bar is not a "change"
    opening = _in_window(times, t, CHANGE_BEATS * 60.0 / running)
    if opening.sum() >= 2 and weights[opening].sum() > 0:
        first = _local_tempo(times[opening], weights[opening], running)
        if abs(first.bpm - running) > CHANGE_THRESHOLD:
            running = first.bpm
    while True:
        length = CHANGE_BEATS * 60.0 / running
        if t + length > end + 1e-9:
            break
        mask = _in_window(times, t, length)
        if mask.sum() >= 2 and weights[mask].sum() > 0:
            local = _local_tempo(times[mask], weights[mask], running)
            if abs(local.bpm - running) > CHANGE_THRESHOLD:
                change = _confirm(times, weights, segment_start, t, length, running, local)
                if change is not None:
                    when, bpm = change
                    changes.append((when, bpm))
                    running = bpm
                    segment_start = when
                    t = when + 60.0 / bpm
                    continue
        t += 60.0 / running
    return changes


def _confirm(times, weights, segment_start, t, length, running, local):
    # settle the new tempo on the first window past the deviating one, which
    # lies wholly after the change if the change happened inside this window
    probe = _in_window(times, t + length, length)
    if probe.sum() < 2:
        probe = _in_window(times, t, length)
    seed = _local_tempo(times[probe], weights[probe], local.bpm).bpm
    new = _settle(times[probe], weights[probe], seed)
    if abs(new.bpm - running) <= CHANGE_THRESHOLD:
        return None
    region = _in_window(times, segment_start, t + 2 * length - segment_start)
    before = _in_window(times, segment_start, t - segment_start + 1e-6)
    if before.sum() >= 2:
        r, ph = phase_coherence(times[before], weights[before], running)
        old = TempoEstimate(running, r, ph)
    else:
        old = TempoEstimate(running, *phase_coherence(times[region][:2], weights[region][:2], running))
    idx = np.flatnonzero(region)
    k = _locate_change(times[idx], weights[idx], old, new)
    if k >= len(idx):
        return None
    when = float(times[idx[k]])
    after = _in_window(times, when, CHANGE_BEATS * 60.0 / new.bpm)
    if after.sum() < 2:
        return None
    check = _local_tempo(times[after], weights[after], new.bpm)
    if abs(check.bpm - running) <= CHANGE_THRESHOLD:
        return None
    return when, check.bpm
