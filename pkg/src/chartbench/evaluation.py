"""Onset-level evaluation: greedy tolerance matching, P/R/F1, lane statistics,
per-song global offset search and the ground-truth ceiling analysis."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .chart_io import ManifestEntry, parse_chart_midi
from .model import Chart, Instrument, Lane, Track, lane_of

DEFAULT_TOLERANCE = 0.1
OFFSET_RANGE = 0.2
OFFSET_STEP = 0.01
HISTOGRAM_BIN = 0.01
HISTOGRAM_RANGE = 0.2
# absorbs float error from shifting times by grid offsets
TIME_SLACK = 1e-9


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int, float], ...]
    unmatched_gt: tuple[int, ...]
    unmatched_pred: tuple[int, ...]
    tolerance: float

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.unmatched_pred)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gt)


@dataclass(frozen=True)
class Confusion:
    """Raw counts; rows are ground-truth lanes, columns predicted lanes."""

    labels: tuple[int, ...]
    counts: np.ndarray

    def row_normalized(self) -> np.ndarray:
        totals = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(totals > 0, self.counts / np.maximum(totals, 1), 0.0)
        return out

    def per_class_accuracy(self) -> dict[int, float]:
        norm = self.row_normalized()
        return {lab: float(norm[i, i]) for i, lab in enumerate(self.labels) if self.counts[i].sum() > 0}


@dataclass(frozen=True)
class EvalResult:
    precision: float
    recall: float
    f1: float
    lane_accuracy: float
    confusion: Confusion
    best_offset: float
    gt_count: int
    pred_count: int
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "lane_accuracy": self.lane_accuracy,
            "best_offset": self.best_offset,
            "gt_count": self.gt_count,
            "pred_count": self.pred_count,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "confusion_labels": list(self.confusion.labels),
            "confusion": self.confusion.counts.tolist(),
        }


def _times(x) -> list[float]:
    if isinstance(x, Track):
        return x.times
    return [float(t) for t in x]


def match_times(gt: Sequence[float], pred: Sequence[float], tol: float) -> MatchResult:
    """Greedy matching on sorted time lists.

    Ground-truth events are taken in ascending time; each claims the nearest
    still-unmatched prediction within ``tol`` (distance ties go to the
    earlier prediction).
    """
    if tol <= 0:
        raise EvaluationError("tolerance must be positive")
    taken = [False] * len(pred)
    pairs = []
    unmatched_gt = []
    limit = tol + TIME_SLACK
    for gi, g in enumerate(gt):
        lo = bisect.bisect_left(pred, g - limit)
        hi = bisect.bisect_right(pred, g + limit)
        best, best_d = -1, None
        for pi in range(lo, hi):
            if taken[pi]:
                continue
            d = abs(pred[pi] - g)
            if d <= limit and (best_d is None or d < best_d):
                best, best_d = pi, d
        if best < 0:
            unmatched_gt.append(gi)
        else:
            taken[best] = True
            pairs.append((gi, best, pred[best] - g))
    unmatched_pred = tuple(i for i, t in enumerate(taken) if not t)
    return MatchResult(tuple(pairs), tuple(unmatched_gt), unmatched_pred, tol)


def greedy_match(gt: Track | Sequence[float], pred: Track | Sequence[float], tol: float) -> MatchResult:
    """Match predictions to ground truth by time only; lanes are ignored."""
    return match_times(_times(gt), _times(pred), tol)


def prf(match: MatchResult) -> tuple[float, float, float]:
    tp, fp, fn = match.tp, match.fp, match.fn
    return prf_counts(tp, fp, fn)


def prf_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    n_pred, n_gt = tp + fp, tp + fn
    if n_pred == 0 and n_gt == 0:
        return 1.0, 1.0, 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0, 0.0, 0.0
    p, r = tp / n_pred, tp / n_gt
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def lane_vocabulary(instrument: Instrument, gt: Track, pred: Track) -> tuple[int, ...]:
    if instrument is Instrument.DRUMS:
        return tuple(int(l) for l in Lane)
    if instrument is Instrument.VOCALS:
        return tuple(sorted({lane_of(e.label) for e in gt} | {lane_of(e.label) for e in pred}))
    return (0, 1, 2, 3, 4)


def lane_stats(gt: Track, pred: Track, match: MatchResult) -> tuple[float, Confusion]:
    """Lane accuracy and confusion over matched pairs.

    Drum lanes are the five pads; the tom/cymbal marker is not compared.
    Accuracy is 0.0 when nothing matched.
    """
    labels = lane_vocabulary(gt.instrument, gt, pred)
    index = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    agree = 0
    for gi, pi, _ in match.pairs:
        g, p = lane_of(gt.events[gi].label), lane_of(pred.events[pi].label)
        counts[index[g], index[p]] += 1
        agree += g == p
    acc = agree / len(match.pairs) if match.pairs else 0.0
    return acc, Confusion(labels, counts)


def evaluate_track(gt: Track, pred: Track, tol: float = DEFAULT_TOLERANCE, offset: float = 0.0) -> EvalResult:
    pred_times = [t + offset for t in pred.times]
    match = match_times(gt.times, pred_times, tol)
    p, r, f = prf(match)
    acc, conf = lane_stats(gt, pred, match)
    return EvalResult(p, r, f, acc, conf, offset, len(gt), len(pred), match.tp, match.fp, match.fn)


def offset_grid(offset_range: float = OFFSET_RANGE, step: float = OFFSET_STEP) -> list[float]:
    k = int(round(offset_range / step))
    return [round(i * step, 9) for i in range(-k, k + 1)]


def drums_f1(gt_times: list[float], pred_times: list[float], tol: float, delta: float) -> float:
    return _score(gt_times, pred_times, tol, delta)[0]


def _score(gt_times, pred_times, tol, delta) -> tuple[float, float]:
    """F1 and mean absolute residual of the matched pairs at shift ``delta``."""
    match = match_times(gt_times, [t + delta for t in pred_times], tol)
    resid = sum(abs(d) for _, _, d in match.pairs) / len(match.pairs) if match.pairs else 0.0
    return prf(match)[2], resid


def offset_search(
    gt_chart: Chart,
    pred_chart: Chart,
    tol: float = DEFAULT_TOLERANCE,
    offset_range: float = OFFSET_RANGE,
    step: float = OFFSET_STEP,
) -> tuple[float, dict[Instrument, EvalResult]]:
    """Pick the global shift of predictions that maximises drums F1.

    Equal F1 is broken by the smaller mean absolute residual of the matched
    pairs (inside the tolerance plateau every shift scores the same F1), then
    by the smaller absolute shift, then the more negative one. The chosen
    shift is applied to every ground-truth instrument.
    """
    if Instrument.DRUMS not in gt_chart.tracks or Instrument.DRUMS not in pred_chart.tracks:
        raise EvaluationError("offset search needs a drums track in both charts")
    gt_times = gt_chart.tracks[Instrument.DRUMS].times
    pred_times = pred_chart.tracks[Instrument.DRUMS].times
    best_key, best = None, 0.0
    for delta in offset_grid(offset_range, step):
        f1, resid = _score(gt_times, pred_times, tol, delta)
        key = (-round(f1, 12), round(resid, 9), abs(delta), delta)
        if best_key is None or key < best_key:
            best_key, best = key, delta
    results = {
        inst: evaluate_track(track, pred_chart.track(inst), tol, best)
        for inst, track in gt_chart.tracks.items()
    }
    return best, results


@dataclass(frozen=True)
class CeilingResult:
    fraction_within: float
    offsets: np.ndarray
    bin_centers: np.ndarray
    counts: np.ndarray
    tolerance: float

    @property
    def n_events(self) -> int:
        return len(self.offsets)

    def inside_mass(self) -> int:
        inside = np.abs(self.bin_centers) <= self.tolerance + TIME_SLACK
        return int(self.counts[inside].sum())


def nearest_offsets(gt_events: Sequence[float], onset_peaks: Sequence[float]) -> np.ndarray:
    """Signed ``nearest_peak - gt`` per event (NaN when there are no peaks).

    Equidistant peaks resolve to the earlier one.
    """
    gt = np.asarray(gt_events, dtype=np.float64)
    peaks = np.sort(np.asarray(onset_peaks, dtype=np.float64))
    if peaks.size == 0:
        return np.full(gt.shape, np.nan)
    idx = np.searchsorted(peaks, gt)
    left = peaks[np.clip(idx - 1, 0, peaks.size - 1)]
    right = peaks[np.clip(idx, 0, peaks.size - 1)]
    d_left, d_right = left - gt, right - gt
    return np.where(np.abs(d_left) <= np.abs(d_right), d_left, d_right)


def offset_histogram(offsets: np.ndarray, bin_width: float = HISTOGRAM_BIN, span: float = HISTOGRAM_RANGE):
    k = int(round(span / bin_width))
    centers = np.round(np.arange(-k, k + 1) * bin_width, 9)
    finite = offsets[np.isfinite(offsets)]
    idx = np.clip(np.round(finite / bin_width + TIME_SLACK * np.sign(finite)).astype(int), -k, k) + k
    counts = np.bincount(idx, minlength=2 * k + 1)
    return centers, counts


def gt_ceiling(gt_events: Sequence[float], onset_peaks: Sequence[float], tol: float = DEFAULT_TOLERANCE) -> CeilingResult:
    """Share of ground-truth events within ``tol`` of the nearest detected onset.

    The histogram uses 10 ms bins centred on multiples of 10 ms across
    +/-200 ms; offsets outside that span land in the edge bins.
    """
    return ceiling_from_offsets(nearest_offsets(gt_events, onset_peaks), tol)


def ceiling_from_offsets(offsets: np.ndarray, tol: float = DEFAULT_TOLERANCE) -> CeilingResult:
    offsets = np.asarray(offsets, dtype=np.float64)
    n = offsets.size
    within = int(np.sum(np.abs(offsets[np.isfinite(offsets)]) <= tol + TIME_SLACK))
    centers, counts = offset_histogram(offsets)
    return CeilingResult(within / n if n else 0.0, offsets, centers, counts, tol)


@dataclass
class SongEvaluation:
    song_id: str
    best_offset: float = 0.0
    results: dict[Instrument, EvalResult] = field(default_factory=dict)
    error: str | None = None


def load_gt_chart(entry: ManifestEntry, root: Path | None = None) -> Chart:
    path = Path(entry.gt_chart_path)
    if root is not None and not path.is_absolute():
        path = Path(root) / path
    return parse_chart_midi(path.read_bytes())


def evaluate_song(
    entry: ManifestEntry,
    pred_chart: Chart,
    tol: float = DEFAULT_TOLERANCE,
    root: Path | None = None,
    offset_range: float = OFFSET_RANGE,
    step: float = OFFSET_STEP,
) -> SongEvaluation:
    gt = load_gt_chart(entry, root)
    best, results = offset_search(gt, pred_chart, tol, offset_range, step)
    return SongEvaluation(entry.song_id, best, results)


def aggregate(songs: Sequence[SongEvaluation]) -> dict[Instrument, dict[str, float]]:
    """Micro-averaged P/R/F1 from summed counts, plus macro F1 across songs."""
    out: dict[Instrument, dict[str, float]] = {}
    for inst in Instrument:
        rows = [s.results[inst] for s in songs if s.error is None and inst in s.results]
        if not rows:
            continue
        tp, fp, fn = (sum(getattr(r, k) for r in rows) for k in ("tp", "fp", "fn"))
        p, r, f = prf_counts(tp, fp, fn)
        matched = [x for x in rows if x.tp]
        lane_acc = sum(x.lane_accuracy * x.tp for x in matched) / tp if tp else 0.0
        out[inst] = {
            "precision": p,
            "recall": r,
            "f1": f,
            "macro_f1": float(np.mean([x.f1 for x in rows])),
            "lane_accuracy": lane_acc,
            "gt_count": sum(x.gt_count for x in rows),
            "pred_count": sum(x.pred_count for x in rows),
            "songs": len(rows),
        }
    return out


def summed_confusion(songs: Sequence[SongEvaluation], instrument: Instrument = Instrument.DRUMS) -> Confusion | None:
    mats = [s.results[instrument].confusion for s in songs if s.error is None and instrument in s.results]
    if not mats:
        return None
    labels = mats[0].labels
    if any(m.labels != labels for m in mats):
        all_labels = tuple(sorted({l for m in mats for l in m.labels}))
        index = {l: i for i, l in enumerate(all_labels)}
        total = np.zeros((len(all_labels),) * 2, dtype=np.int64)
        for m in mats:
            for i, gl in enumerate(m.labels):
                for j, pl in enumerate(m.labels):
                    total[index[gl], index[pl]] += m.counts[i, j]
        return Confusion(all_labels, total)
    return Confusion(labels, sum(m.counts for m in mats))
