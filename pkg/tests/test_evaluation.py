import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chartbench.chart_io import ManifestEntry, emit_chart_midi
from chartbench.evaluation import (
    EvaluationError,
    SongEvaluation,
    aggregate,
    evaluate_song,
    evaluate_track,
    gt_ceiling,
    greedy_match,
    lane_stats,
    offset_grid,
    offset_search,
    prf,
    prf_counts,
)
from chartbench.model import BLUE_CYM, BLUE_TOM, GREEN_CYM, KICK, RED, YELLOW_CYM, Chart, Instrument, TimedEvent, Track

from oracles import max_matching
from synth import chart_of, drum_pattern, guitar_line


def drums(times, labels=None):
    labels = labels or [RED] * len(times)
    return Track(Instrument.DRUMS, tuple(TimedEvent(t, lab) for t, lab in zip(times, labels)))


def test_worked_example():
    m = greedy_match([1.00, 2.00, 3.00], [1.05, 2.30, 2.95], 0.1)
    assert [(g, p) for g, p, _ in m.pairs] == [(0, 0), (2, 2)]
    assert (m.tp, m.fp, m.fn) == (2, 1, 1)
    assert [d for _, _, d in m.pairs] == pytest.approx([0.05, -0.05])
    assert prf(m) == pytest.approx((2 / 3, 2 / 3, 2 / 3))
    # exhaustively, no matching of this instance does better than 2
    best = 0
    for perm in itertools.permutations(range(3)):
        best = max(best, sum(abs([1.05, 2.30, 2.95][p] - g) <= 0.1 for g, p in zip([1.0, 2.0, 3.0], perm)))
    assert best == 2


def test_identity_and_empty():
    m = greedy_match([0.5, 1.0, 1.5], [0.5, 1.0, 1.5], 0.05)
    assert m.tp == 3 and all(d == 0 for _, _, d in m.pairs)
    assert prf(m) == (1.0, 1.0, 1.0)
    m = greedy_match([0.5, 1.0], [], 0.05)
    assert m.unmatched_gt == (0, 1) and prf(m) == (0.0, 0.0, 0.0)
    assert prf(greedy_match([], [], 0.05)) == (1.0, 1.0, 1.0)
    assert prf(greedy_match([], [1.0], 0.05)) == (0.0, 0.0, 0.0)


def test_nearest_wins_and_ties_go_earlier():
    m = greedy_match([1.0], [0.95, 1.02], 0.1)
    assert m.pairs[0][1] == 1
    m = greedy_match([1.0], [0.95, 1.05], 0.1)
    assert m.pairs[0][1] == 0


def test_lane_ignored_for_matching():
    m = greedy_match(drums([1.0], [KICK]), drums([1.0], [GREEN_CYM]), 0.05)
    assert m.tp == 1


def test_tolerance_must_be_positive():
    with pytest.raises(EvaluationError):
        greedy_match([1.0], [1.0], 0.0)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0, 10), max_size=30), st.lists(st.floats(0, 10), max_size=30), st.floats(0.005, 0.5))
def test_greedy_never_beats_maximum_matching(gt, pred, tol):
    gt, pred = sorted(gt), sorted(pred)
    m = greedy_match(gt, pred, tol)
    assert m.tp <= max_matching(gt, pred, tol)
    used_g = [g for g, _, _ in m.pairs]
    used_p = [p for _, p, _ in m.pairs]
    assert len(set(used_g)) == len(used_g) and len(set(used_p)) == len(used_p)
    assert all(abs(d) <= tol + 1e-9 for _, _, d in m.pairs)
    assert m.tp + m.fn == len(gt) and m.tp + m.fp == len(pred)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 10), max_size=30), st.lists(st.floats(0, 10), max_size=30), st.floats(0.005, 0.1))
def test_greedy_is_optimal_on_well_separated_events(gt, pred, tol):
    gt, pred = sorted(gt), sorted(pred)
    if any(b - a <= 2 * tol for a, b in zip(gt, gt[1:])) or any(b - a <= 2 * tol for a, b in zip(pred, pred[1:])):
        return
    assert greedy_match(gt, pred, tol).tp == max_matching(gt, pred, tol)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1, 10), max_size=20), st.lists(st.floats(1, 10), max_size=20), st.floats(-0.9, 5))
def test_f1_shift_invariant(gt, pred, shift):
    gt, pred = sorted(gt), sorted(pred)
    a = prf(greedy_match(gt, pred, 0.05))
    # dyadic shifts keep differences exact in floating point
    s = round(shift * 64) / 64
    b = prf(greedy_match([g + s for g in gt], [p + s for p in pred], 0.05))
    assert a == pytest.approx(b)


def test_prf_counts_formula():
    assert prf_counts(2, 1, 1) == pytest.approx((2 / 3, 2 / 3, 2 / 3))
    p, r, f = prf_counts(3, 1, 5)
    assert f == pytest.approx(2 * p * r / (p + r))
    assert prf_counts(0, 3, 3) == (0.0, 0.0, 0.0)


def test_lane_stats_all_equal():
    gt = drums([1.0, 2.0, 3.0], [KICK, RED, YELLOW_CYM])
    acc, conf = lane_stats(gt, gt, greedy_match(gt, gt, 0.05))
    assert acc == 1.0
    assert np.array_equal(conf.counts, np.diag([1, 1, 1, 0, 0]))


def test_lane_swap_halves_accuracy():
    gt = drums([1.0, 2.0], [KICK, RED])
    pred = drums([1.0, 2.0], [RED, KICK])
    same = drums([1.0, 2.0], [KICK, KICK])
    acc, conf = lane_stats(gt, same, greedy_match(gt, same, 0.05))
    assert acc == 0.5
    acc, conf = lane_stats(gt, pred, greedy_match(gt, pred, 0.05))
    assert acc == 0.0 and conf.counts[0, 1] == conf.counts[1, 0] == 1


def test_lane_accuracy_ignores_tom_cymbal_marker():
    gt = drums([1.0, 2.0], [BLUE_TOM, BLUE_TOM])
    pred = drums([1.0, 2.0], [BLUE_CYM, YELLOW_CYM])
    acc, conf = lane_stats(gt, pred, greedy_match(gt, pred, 0.05))
    assert acc == 0.5
    assert conf.counts[3, 3] == 1 and conf.counts[3, 2] == 1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 10), st.sampled_from([KICK, RED, YELLOW_CYM, BLUE_TOM, GREEN_CYM])), max_size=25),
       st.lists(st.tuples(st.floats(0, 10), st.sampled_from([KICK, RED, YELLOW_CYM, BLUE_TOM, GREEN_CYM])), max_size=25))
def test_confusion_sums(gt, pred):
    g = Track(Instrument.DRUMS, tuple(TimedEvent(t, lab) for t, lab in gt))
    p = Track(Instrument.DRUMS, tuple(TimedEvent(t, lab) for t, lab in pred))
    res = evaluate_track(g, p, 0.1)
    assert res.confusion.counts.sum() == res.tp
    rows = res.confusion.row_normalized()
    nonempty = res.confusion.counts.sum(axis=1) > 0
    assert np.allclose(rows[nonempty].sum(axis=1), 1.0)
    assert 0.0 <= res.f1 <= 1.0 and 0.0 <= res.lane_accuracy <= 1.0


def _gt_chart():
    return chart_of(drum_pattern(120, 4), guitar_line(120, 4))


def _shifted(chart: Chart, d: float) -> Chart:
    return Chart({i: Track(i, tuple(TimedEvent(e.time + d, e.label) for e in t.events)) for i, t in chart.tracks.items()},
                 chart.tempo_map)


def test_offset_search_recovers_shift():
    gt = _gt_chart()
    best, results = offset_search(gt, _shifted(gt, 0.05), 0.1)
    assert best == -0.05
    assert all(r.f1 == 1.0 for r in results.values())
    assert all(r.best_offset == -0.05 for r in results.values())


def test_offset_search_identity():
    gt = _gt_chart()
    assert offset_search(gt, gt)[0] == 0.0


def test_offset_tie_break_reaches_signed_rule():
    # one GT event; candidate matches sit at +/-30 ms and score the same
    gt = chart_of(drums([1.0]))
    pred = chart_of(drums([0.97, 1.03]))
    best, res = offset_search(gt, pred, 0.004)
    assert best == -0.03
    assert res[Instrument.DRUMS].f1 == pytest.approx(2 / 3)


def test_offset_tie_prefers_smaller_shift():
    gt = chart_of(drums([1.0]))
    pred = chart_of(drums([0.98, 1.05]))
    assert offset_search(gt, pred, 0.004)[0] == 0.02


def test_offset_search_needs_drums():
    gt = chart_of(guitar_line(120, 2))
    with pytest.raises(EvaluationError):
        offset_search(gt, gt)


def test_offset_grid():
    grid = offset_grid()
    assert len(grid) == 41 and grid[0] == -0.2 and grid[20] == 0.0 and grid[-1] == 0.2


def test_ceiling_identity_and_displaced():
    gt = list(np.arange(1, 50) * 0.5)
    res = gt_ceiling(gt, gt, 0.1)
    assert res.fraction_within == 1.0
    assert res.counts[20] == len(gt) and res.counts.sum() == len(gt)
    res = gt_ceiling(gt, [t + 0.15 for t in gt], 0.1)
    assert res.fraction_within == 0.0
    assert res.counts[35] == len(gt)


def test_ceiling_89_11_mixture():
    gt = list(np.arange(100) * 0.5 + 1.0)
    peaks = [t if i < 89 else t + 0.15 for i, t in enumerate(gt)]
    res = gt_ceiling(gt, peaks, 0.1)
    assert res.fraction_within == 0.89
    assert res.inside_mass() == 89
    assert res.counts[20] == 89 and res.counts[35] == 11


def test_ceiling_outliers_land_in_edge_bins():
    res = gt_ceiling([1.0, 5.0], [1.7, 4.1], 0.1)
    assert res.counts[-1] == 1 and res.counts[0] == 1
    assert np.isnan(gt_ceiling([1.0], [], 0.1).offsets[0])


def test_evaluate_song_reads_gt(tmp_path):
    gt = _gt_chart()
    (tmp_path / "notes.mid").write_bytes(emit_chart_midi(gt))
    entry = ManifestEntry("s", "t", "a", "rock", "m.wav", "d.wav", "notes.mid")
    song = evaluate_song(entry, _shifted(gt, -0.07), root=tmp_path)
    assert song.best_offset == 0.07
    assert song.results[Instrument.GUITAR].f1 == 1.0
    assert json.dumps(song.results[Instrument.DRUMS].to_dict())


def test_aggregate_is_micro_average():
    a = SongEvaluation("a", 0.0, {Instrument.DRUMS: evaluate_track(drums([1, 2, 3, 4]), drums([1, 2]))})
    b = SongEvaluation("b", 0.0, {Instrument.DRUMS: evaluate_track(drums([1]), drums([1, 5, 6]))})
    agg = aggregate([a, b, SongEvaluation("c", error="boom")])[Instrument.DRUMS]
    # TP 3, FP 2, FN 2
    assert agg["precision"] == pytest.approx(3 / 5) and agg["recall"] == pytest.approx(3 / 5)
    assert agg["macro_f1"] == pytest.approx((2 / 3 + 0.5) / 2)
    assert agg["songs"] == 2 and agg["gt_count"] == 5
