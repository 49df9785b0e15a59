"""Tabular (TSV) and structured (JSON) reports for evaluation and ablation runs."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .ablation import AblationReport
from .evaluation import CeilingResult, SongEvaluation, aggregate
from .model import INSTRUMENT_ORDER, Instrument

EVAL_COLUMNS = ("song_id", "instrument", "f1", "precision", "recall", "gt_events", "pred_events",
                "lane_accuracy", "best_offset_ms", "error")
AGG_COLUMNS = ("instrument", "f1", "precision", "recall", "gt_events", "pred_events", "lane_accuracy",
               "macro_f1", "songs")
ABLATION_COLUMNS = ("component", "delta_f1", "p_value", "better", "worse", "tie", "bwt", "events_changed",
                    "full_events", "significant")


@dataclass(frozen=True)
class Report:
    table: bytes
    document: bytes
    text: str = ""


def _tsv(header: Sequence[str], rows: Iterable[Sequence]) -> bytes:
    lines = ["\t".join(header)]
    lines += ["\t".join(str(c) for c in row) for row in rows]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _fmt(x: float, digits: int = 4) -> str:
    return f"{x:.{digits}f}"


def _plain(header: Sequence[str], rows: list[Sequence[str]]) -> str:
    widths = [max([len(h)] + [len(str(r[i])) for r in rows]) for i, h in enumerate(header)]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    out.append("  ".join("-" * w for w in widths))
    out += ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(line.rstrip() for line in out) + "\n"


def write_report(songs: Sequence[SongEvaluation]) -> Report:
    """Per-song rows ordered by song_id then instrument, plus micro/macro aggregates."""
    songs = sorted(songs, key=lambda s: s.song_id)
    rows = []
    for song in songs:
        if song.error is not None:
            rows.append((song.song_id, "-", "", "", "", "", "", "", "", song.error.replace("\t", " ")))
            continue
        for inst in INSTRUMENT_ORDER:
            res = song.results.get(inst)
            if res is None:
                continue
            rows.append((song.song_id, inst.value, _fmt(res.f1), _fmt(res.precision), _fmt(res.recall),
                         res.gt_count, res.pred_count, _fmt(res.lane_accuracy),
                         _fmt(song.best_offset * 1000, 1), ""))
    agg = aggregate(songs)
    agg_rows = [
        (inst.value, _fmt(a["f1"]), _fmt(a["precision"]), _fmt(a["recall"]), a["gt_count"], a["pred_count"],
         _fmt(a["lane_accuracy"]), _fmt(a["macro_f1"]), a["songs"])
        for inst, a in agg.items()
    ]
    doc = {
        "songs": [
            {
                "song_id": s.song_id,
                "error": s.error,
                "best_offset": s.best_offset,
                "instruments": {inst.value: s.results[inst].to_dict() for inst in INSTRUMENT_ORDER if inst in s.results},
            }
            for s in songs
        ],
        "aggregate": {inst.value: a for inst, a in agg.items()},
    }
    table = _tsv(EVAL_COLUMNS, rows)
    text = _plain(AGG_COLUMNS, [tuple(map(str, r)) for r in agg_rows]) if agg_rows else _plain(AGG_COLUMNS, [])
    document = (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")
    return Report(table, document, text)


def aggregate_table(songs: Sequence[SongEvaluation]) -> bytes:
    agg = aggregate(songs)
    return _tsv(AGG_COLUMNS, [
        (inst.value, _fmt(a["f1"]), _fmt(a["precision"]), _fmt(a["recall"]), a["gt_count"], a["pred_count"],
         _fmt(a["lane_accuracy"]), _fmt(a["macro_f1"]), a["songs"])
        for inst, a in agg.items()
    ])


def write_ablation_report(reports: Sequence[AblationReport]) -> Report:
    reports = sorted(reports, key=lambda r: r.component)
    rows = [
        (r.component, f"{r.mean_delta_f1:+.4f}", _fmt(r.p_value), r.better, r.worse, r.tie,
         f"{r.better}/{r.worse}/{r.tie}", r.events_changed, r.full_events, "*" if r.significant else "")
        for r in reports
    ]
    doc = {"ablations": [r.to_dict() for r in reports]}
    text = _plain(("component", "dF1", "p", "B/W/T", "events_changed", "sig"),
                  [(r[0], r[1], r[2], r[6], str(r[7]), r[9]) for r in rows])
    return Report(_tsv(ABLATION_COLUMNS, rows),
                  (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8"), text)


def write_ceiling_report(result: CeilingResult, per_song: dict[str, float] | None = None) -> Report:
    rows = [(f"{c * 1000:.0f}", int(n)) for c, n in zip(result.bin_centers, result.counts)]
    doc = {
        "fraction_within": result.fraction_within,
        "tolerance": result.tolerance,
        "n_events": result.n_events,
        "histogram": {"bin_center_ms": [float(round(c * 1000, 6)) for c in result.bin_centers],
                      "count": [int(n) for n in result.counts]},
        "per_song_fraction": dict(sorted((per_song or {}).items())),
    }
    text = f"{result.fraction_within:.1%} of {result.n_events} ground-truth events within +/-{result.tolerance * 1000:.0f} ms\n"
    return Report(_tsv(("bin_center_ms", "count"), rows),
                  (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8"), text)


def instrument_label(inst: Instrument) -> str:
    return inst.value.capitalize()
