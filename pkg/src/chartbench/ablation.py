"""Paired ablation statistics: per-song F1 deltas, Wilcoxon signed-rank test,
better/worse/tie split and the events-changed diff between two runs."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .model import Track

EVENT_TOLERANCE = 0.02
ZERO_EPS = 1e-12
TIE_EPS = 1e-9
EXACT_MAX_N = 20
SIGNIFICANCE = 0.05


def event_diff(a: Track, b: Track, tol: float = EVENT_TOLERANCE) -> int:
    """Count events that differ between two runs of the same song.

    Events pair up only with an equal class label and ``|dt| <= tol``; the
    diff is the number of unpaired events on both sides. Within each label,
    events are paired earliest-first, which gives a maximum pairing of the
    tolerance graph and so a diff that does not depend on argument order.
    """
    by_label_a: dict = defaultdict(list)
    by_label_b: dict = defaultdict(list)
    for ev in a.events:
        by_label_a[ev.label].append(ev.time)
    for ev in b.events:
        by_label_b[ev.label].append(ev.time)
    matched = 0
    limit = tol + 1e-9
    for label, xs in by_label_a.items():
        ys = by_label_b.get(label)
        if not ys:
            continue
        i = j = 0
        while i < len(xs) and j < len(ys):
            if ys[j] < xs[i] - limit:
                j += 1
            elif xs[i] < ys[j] - limit:
                i += 1
            else:
                matched += 1
                i += 1
                j += 1
    return (len(a) - matched) + (len(b) - matched)


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n: int
    mode: str
    degenerate: bool = False


def signed_ranks(deltas: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Average ranks of ``|d|`` for non-zero deltas, and their signs."""
    d = np.asarray(deltas, dtype=np.float64)
    d = d[np.abs(d) >= ZERO_EPS]
    mag = np.abs(d)
    order = np.argsort(mag, kind="mergesort")
    ranks = np.empty(len(d))
    i = 0
    while i < len(d):
        j = i
        while j + 1 < len(d) and mag[order[j + 1]] == mag[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks, np.sign(d)


def _exact_p(doubled: np.ndarray, w_obs2: int) -> float:
    """P(min(W+, W-) <= w_obs) under the null, counted over all 2**n sign patterns.

    Ranks are doubled so tied (half-integer) ranks stay integral; the count
    of sign patterns per W+ value is built one rank at a time.
    """
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled:
        r = int(r)
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    w_plus = np.arange(total + 1)
    hit = np.minimum(w_plus, total - w_plus) <= w_obs2
    n = len(doubled)
    return min(1.0, int(counts[hit].sum()) / 2**n)


def wilcoxon_signed_rank(deltas: Sequence[float], mode: str = "auto") -> WilcoxonResult:
    """Two-sided paired Wilcoxon signed-rank test on per-song deltas.

    Zeros are dropped, tied magnitudes share average ranks and the
    statistic is ``min(W+, W-)``. ``exact`` counts sign assignments;
    ``normal`` uses the tie-corrected normal approximation without
    continuity correction; ``auto`` is exact for up to 20 non-zero deltas.
    All-zero input gives ``p = 1`` with ``degenerate=True``.
    """
    if len(deltas) == 0:
        raise ValueError("need at least one delta")
    if mode not in ("exact", "normal", "auto"):
        raise ValueError(f"unknown mode {mode!r}")
    ranks, signs = signed_ranks(deltas)
    n = len(ranks)
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, mode if mode != "auto" else "exact", True)
    w_plus = float(ranks[signs > 0].sum())
    w_minus = float(ranks[signs < 0].sum())
    w = min(w_plus, w_minus)
    if mode == "auto":
        mode = "exact" if n <= EXACT_MAX_N else "normal"
    if mode == "exact":
        doubled = np.round(2 * ranks).astype(np.int64)
        p = _exact_p(doubled, int(round(2 * w)))
    else:
        mean = n * (n + 1) / 4
        _, tie_sizes = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24 - float(np.sum(tie_sizes**3 - tie_sizes)) / 48
        if var <= 0:
            return WilcoxonResult(w, 1.0, n, mode, True)
        z = (w - mean) / math.sqrt(var)
        p = min(1.0, math.erfc(abs(z) / math.sqrt(2)))
    return WilcoxonResult(w, p, n, mode)


@dataclass(frozen=True)
class SongRun:
    """One song's outcome in one pipeline configuration."""

    f1: float
    drums: Track


@dataclass(frozen=True)
class AblationReport:
    component: str
    mean_delta_f1: float
    p_value: float
    better: int
    worse: int
    tie: int
    events_changed: int
    full_events: int = 0
    n_songs: int = 0
    degenerate: bool = False

    @property
    def significant(self) -> bool:
        return not self.degenerate and self.p_value < SIGNIFICANCE

    def to_dict(self) -> dict:
        return {
            "component": self.component,
            "mean_delta_f1": self.mean_delta_f1,
            "p_value": self.p_value,
            "better": self.better,
            "worse": self.worse,
            "tie": self.tie,
            "events_changed": self.events_changed,
            "full_events": self.full_events,
            "n_songs": self.n_songs,
            "significant": self.significant,
            "degenerate": self.degenerate,
        }


def ablation_report(
    full_runs: Mapping[str, SongRun], ablated_runs: Mapping[str, SongRun], component: str
) -> AblationReport:
    if set(full_runs) != set(ablated_runs):
        missing = sorted(set(full_runs) ^ set(ablated_runs))
        raise ValueError(f"full and ablated runs cover different songs: {', '.join(missing)}")
    if not full_runs:
        raise ValueError("no songs to compare")
    songs = sorted(full_runs)
    deltas = [ablated_runs[s].f1 - full_runs[s].f1 for s in songs]
    better = sum(d >= TIE_EPS for d in deltas)
    worse = sum(d <= -TIE_EPS for d in deltas)
    tie = len(deltas) - better - worse
    changed = sum(event_diff(full_runs[s].drums, ablated_runs[s].drums) for s in songs)
    test = wilcoxon_signed_rank([0.0 if abs(d) < TIE_EPS else d for d in deltas], "auto")
    return AblationReport(
        component=component,
        mean_delta_f1=float(np.mean(deltas)),
        p_value=test.p_value,
        better=better,
        worse=worse,
        tie=tie,
        events_changed=changed,
        full_events=sum(len(full_runs[s].drums) for s in songs),
        n_songs=len(songs),
        degenerate=test.degenerate,
    )
