"""Operating-envelope audio screen and seeded, genre-capped benchmark sampling."""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import AudioBuffer, MixStats, decode_wav, normalize_by_mix, windowed_rms
from .chart_io import ManifestEntry

DEFAULT_THRESHOLD = 0.018
RMS_WINDOW = 1.0
RMS_HOP = 0.5
DEFAULT_SEED = 20260510


class ScreeningError(ValueError):
    pass


@dataclass(frozen=True)
class ScreenResult:
    passed: bool
    statistic: float


def envelope_statistic(drum_stem: AudioBuffer, stats: MixStats) -> float:
    """Median 1 s RMS (0.5 s hop) of the drum stem after mix normalisation."""
    if drum_stem.duration < RMS_WINDOW:
        raise ScreeningError(f"drum stem is {drum_stem.duration:.3f} s; need at least {RMS_WINDOW} s")
    _, rms = windowed_rms(normalize_by_mix(drum_stem, stats), RMS_WINDOW, RMS_HOP)
    return float(np.median(rms))


def passes(statistic: float, threshold: float = DEFAULT_THRESHOLD) -> bool:
    return statistic >= threshold


def screen_audio(mix: AudioBuffer, drum_stem: AudioBuffer, threshold: float = DEFAULT_THRESHOLD) -> ScreenResult:
    stat = envelope_statistic(drum_stem, MixStats.from_mix(mix))
    return ScreenResult(passes(stat, threshold), stat)


def resolve_path(path: str, root: Path | None) -> Path:
    p = Path(path)
    if p.is_absolute() or root is None:
        return p
    return Path(root) / p


def screen(entry: ManifestEntry, threshold: float = DEFAULT_THRESHOLD, audio_root: Path | None = None) -> ScreenResult:
    """Screen one manifest entry, reading its mix and drum stem from disk."""
    mix = decode_wav(resolve_path(entry.mix_audio_path, audio_root).read_bytes())
    stem = decode_wav(resolve_path(entry.drum_stem_path, audio_root).read_bytes())
    return screen_audio(mix, stem, threshold)


# SplitMix64 (Steele, Lea & Flood 2014); the constants are the published ones.
_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)`` by rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            r = self.next()
            if r < limit:
                return r % bound

    def split(self) -> "SplitMix64":
        return SplitMix64(self.next())


def sample_benchmark(
    passers: Sequence[ManifestEntry], n: int, per_genre_cap: int, seed: int = DEFAULT_SEED
) -> list[ManifestEntry]:
    """Draw ``n`` songs uniformly without replacement, at most ``per_genre_cap`` per genre.

    Candidates are ordered by ``song_id`` before drawing, so the result
    depends only on the set of passers and the seed. A drawn song whose
    genre is already full is discarded. Output is sorted by ``song_id``.
    """
    pool = sorted(passers, key=lambda e: e.song_id)
    counts = Counter(e.genre for e in pool)
    feasible = sum(min(c, per_genre_cap) for c in counts.values())
    if n < 0 or per_genre_cap < 0:
        raise ScreeningError("n and per_genre_cap must be non-negative")
    if n > feasible:
        binding = sorted(g for g, c in counts.items() if c > per_genre_cap)
        raise ScreeningError(
            f"cannot draw {n} songs: at most {feasible} available under a cap of {per_genre_cap}"
            + (f" (binding genres: {', '.join(binding)})" if binding else "")
        )
    rng = SplitMix64(seed)
    taken: Counter = Counter()
    chosen = []
    while len(chosen) < n:
        entry = pool.pop(rng.below(len(pool)))
        if taken[entry.genre] >= per_genre_cap:
            continue
        taken[entry.genre] += 1
        chosen.append(entry)
    return sorted(chosen, key=lambda e: e.song_id)


def audio_root_from_env(default: Path | None) -> Path | None:
    override = os.environ.get("CHARTBENCH_AUDIO_ROOT")
    return Path(override) if override else default
