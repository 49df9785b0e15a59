"""Command-line front end: screen, sample, evaluate, ablate, ceiling, tempo,
correct, map-lanes and convert."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .ablation import AblationReport, SongRun, ablation_report
from .audio import decode_wav, onset_envelope, pick_peaks
from .chart_io import (
    ManifestEntry,
    dump_manifest,
    emit_chart_midi,
    format_prediction_file,
    load_prediction_chart,
    parse_chart_midi,
    parse_manifest,
    parse_prediction_file,
    write_prediction_dir,
)
from .correctors import RULES, CorrectorConfig, StemBandEnergy, run_pipeline
from .evaluation import (
    DEFAULT_TOLERANCE,
    OFFSET_RANGE,
    OFFSET_STEP,
    SongEvaluation,
    aggregate,
    ceiling_from_offsets,
    evaluate_song,
    gt_ceiling,
    load_gt_chart,
    nearest_offsets,
    summed_confusion,
)
from .lane_mapper import TONIC_WINDOW, lanes_track, parse_pitched_notes
from .model import Chart, Instrument, TempoMap
from .reporting import aggregate_table, write_ablation_report, write_ceiling_report, write_report
from .screening import (
    DEFAULT_THRESHOLD,
    DEFAULT_SEED,
    resolve_path,
    sample_benchmark,
    screen,
)
from .tempo import detect_tempo_changes, estimate_bpm_coarse, refine_bpm

log = logging.getLogger("chartbench")

AUDIO_ROOT_ENV = "CHARTBENCH_AUDIO_ROOT"


def _pmap(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _load_manifest(path: Path) -> list[ManifestEntry]:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def _scored_entries(args) -> list[ManifestEntry]:
    """Manifest entries to score; songs that failed a recorded screen are dropped."""
    entries = _load_manifest(args.manifest)
    if args.include_failed:
        return entries
    kept = [e for e in entries if e.passed_screen is not False]
    if len(kept) < len(entries):
        log.info("skipping %d songs that failed screening", len(entries) - len(kept))
    return kept


def _audio_root(args) -> Path:
    if getattr(args, "audio_root", None):
        return Path(args.audio_root)
    env = os.environ.get(AUDIO_ROOT_ENV)
    if env:
        return Path(env)
    return Path(args.manifest).resolve().parent


def _gt_root(args) -> Path:
    if getattr(args, "gt_root", None):
        return Path(args.gt_root)
    return Path(args.manifest).resolve().parent


def _write(out: Path, name: str, data: bytes | str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.write_bytes(data)
    return path


# -- screen / sample -----------------------------------------------------------------


def _screen_one(job):
    entry, threshold, root = job
    try:
        return entry.song_id, screen(entry, threshold, root), None
    except Exception as exc:  # reported per song; the batch continues
        return entry.song_id, None, f"{type(exc).__name__}: {exc}"


def cmd_screen(args) -> int:
    entries = _load_manifest(args.manifest)
    root = _audio_root(args)
    results = _pmap(_screen_one, [(e, args.threshold, root) for e in entries], args.jobs)
    by_id = {sid: (res, err) for sid, res, err in results}
    rows = ["song_id\tgenre\tmedian_drum_rms\tpassed\terror"]
    errors = 0
    for e in sorted(entries, key=lambda e: e.song_id):
        res, err = by_id[e.song_id]
        if err is not None:
            errors += 1
            e.passed_screen, e.median_drum_rms = None, None
            rows.append(f"{e.song_id}\t{e.genre}\t\t\t{err}")
            continue
        e.passed_screen, e.median_drum_rms = res.passed, res.statistic
        rows.append(f"{e.song_id}\t{e.genre}\t{res.statistic:.6f}\t{'pass' if res.passed else 'fail'}\t")
    out = Path(args.out)
    _write(out, "manifest.screened.json", dump_manifest(entries))
    _write(out, "screen_summary.tsv", "\n".join(rows) + "\n")
    n_pass = sum(1 for e in entries if e.passed_screen)
    n_fail = sum(1 for e in entries if e.passed_screen is False)
    print(f"screened {len(entries)} songs at threshold {args.threshold}: {n_pass} passed, {n_fail} failed, {errors} errors")
    return 1 if errors else 0


def cmd_sample(args) -> int:
    entries = _load_manifest(args.manifest)
    passers = [e for e in entries if e.passed_screen]
    chosen = sample_benchmark(passers, args.n, args.cap, args.seed)
    text = dump_manifest(chosen)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


# -- evaluate ------------------------------------------------------------------------


def _evaluate_one(job) -> SongEvaluation:
    entry, pred_dir, gt_root, tol, rng, step = job
    try:
        pred = load_prediction_chart(pred_dir, entry.song_id)
        return evaluate_song(entry, pred, tol, gt_root, rng, step)
    except Exception as exc:
        return SongEvaluation(entry.song_id, error=f"{type(exc).__name__}: {exc}")


def evaluate_dir(entries, pred_dir, gt_root, tol, rng, step, jobs) -> list[SongEvaluation]:
    jobs_ = [(e, Path(pred_dir), gt_root, tol, rng, step) for e in sorted(entries, key=lambda e: e.song_id)]
    return _pmap(_evaluate_one, jobs_, jobs)


def cmd_evaluate(args) -> int:
    entries = _scored_entries(args)
    songs = evaluate_dir(entries, args.predictions, _gt_root(args), args.tol, args.offset_range,
                         args.offset_step, args.jobs)
    report = write_report(songs)
    out = Path(args.out)
    _write(out, "evaluation.tsv", report.table)
    _write(out, "evaluation.json", report.document)
    _write(out, "evaluation_aggregate.tsv", aggregate_table(songs))
    if not args.no_figures:
        from . import plotting

        agg = aggregate(songs)
        if agg:
            plotting.plot_f1_by_instrument(agg, out / "figures" / "f1_by_instrument.png")
        conf = summed_confusion(songs)
        if conf is not None:
            plotting.plot_confusion(conf, out / "figures" / "drum_confusion.png")
    sys.stdout.write(report.text)
    errors = [s for s in songs if s.error]
    for s in errors:
        log.error("%s: %s", s.song_id, s.error)
    return 1 if errors else 0


# -- ablate --------------------------------------------------------------------------


def _runs(songs: list[SongEvaluation], pred_dir: Path) -> dict[str, SongRun]:
    runs = {}
    for s in songs:
        pred = load_prediction_chart(pred_dir, s.song_id)
        runs[s.song_id] = SongRun(s.results[Instrument.DRUMS].f1, pred.track(Instrument.DRUMS))
    return runs


def cmd_ablate(args) -> int:
    entries = _scored_entries(args)
    gt_root = _gt_root(args)
    names = list(args.component or [])
    if len(names) > len(args.ablated):
        raise SystemExit("more --component names than ablated directories")
    names += [Path(d).name for d in args.ablated[len(names):]]
    full = evaluate_dir(entries, args.full, gt_root, args.tol, args.offset_range, args.offset_step, args.jobs)
    failed = [s for s in full if s.error]
    reports: list[AblationReport] = []
    for name, adir in zip(names, args.ablated):
        abl = evaluate_dir(entries, adir, gt_root, args.tol, args.offset_range, args.offset_step, args.jobs)
        failed += [s for s in abl if s.error]
        bad = {s.song_id for s in full if s.error} | {s.song_id for s in abl if s.error}
        ok_full = [s for s in full if s.song_id not in bad]
        ok_abl = [s for s in abl if s.song_id not in bad]
        if not ok_full:
            continue
        reports.append(ablation_report(_runs(ok_full, Path(args.full)), _runs(ok_abl, Path(adir)), name))
    report = write_ablation_report(reports)
    out = Path(args.out)
    _write(out, "ablation.tsv", report.table)
    _write(out, "ablation.json", report.document)
    if not args.no_figures and reports:
        from . import plotting

        plotting.plot_ablation(reports, out / "figures" / "ablation_delta_f1.png")
    sys.stdout.write(report.text)
    for s in failed:
        log.error("%s: %s", s.song_id, s.error)
    return 1 if failed else 0


# -- ceiling -------------------------------------------------------------------------


def _ceiling_one(job):
    entry, gt_root, audio_root, source = job
    try:
        chart = load_gt_chart(entry, gt_root)
        path = entry.mix_audio_path if source == "mix" else entry.drum_stem_path
        audio = decode_wav(resolve_path(path, audio_root).read_bytes())
        peaks = pick_peaks(onset_envelope(audio))
        return entry.song_id, chart.track(Instrument.DRUMS).times, peaks, None
    except Exception as exc:
        return entry.song_id, None, None, f"{type(exc).__name__}: {exc}"


def cmd_ceiling(args) -> int:
    entries = sorted(_load_manifest(args.manifest), key=lambda e: e.song_id)
    jobs = [(e, _gt_root(args), _audio_root(args), args.source) for e in entries]
    off_all, per_song, errors = [], {}, []
    for sid, gt, peaks, err in _pmap(_ceiling_one, jobs, args.jobs):
        if err:
            errors.append((sid, err))
            continue
        per_song[sid] = gt_ceiling(gt, peaks, args.tol).fraction_within
        off_all.append(nearest_offsets(gt, peaks))
    # pooled over songs; each song is matched against its own onset peaks
    offsets = np.concatenate(off_all) if off_all else np.zeros(0)
    result = ceiling_from_offsets(offsets, args.tol)
    n = result.n_events
    report = write_ceiling_report(result, per_song)
    out = Path(args.out)
    _write(out, "ceiling_histogram.tsv", report.table)
    _write(out, "ceiling.json", report.document)
    if not args.no_figures and n:
        from . import plotting

        plotting.plot_offset_histogram(result, out / "figures" / "ceiling_histogram.png")
    sys.stdout.write(report.text)
    for sid, err in errors:
        log.error("%s: %s", sid, err)
    return 1 if errors else 0


# -- single-file tools ---------------------------------------------------------------


def cmd_tempo(args) -> int:
    env = onset_envelope(decode_wav(Path(args.audio).read_bytes()))
    coarse = estimate_bpm_coarse(env)
    est = refine_bpm(env, coarse)
    doc = {
        "bpm": est.bpm,
        "coherence": est.coherence,
        "phase": est.phase,
        "coarse_bpm": coarse,
        "changes": [] if args.no_changes else [{"time": t, "bpm": b} for t, b in detect_tempo_changes(env, est)],
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_correct(args) -> int:
    track = parse_prediction_file(Path(args.predictions).read_text(encoding="utf-8"), Instrument.DRUMS)
    stem = decode_wav(Path(args.stem).read_bytes())
    config = CorrectorConfig().without(*(args.disable or []))
    fixed = run_pipeline(track, config, onset_envelope(stem), StemBandEnergy.from_audio(stem))
    Path(args.output).write_text(format_prediction_file(fixed), encoding="utf-8")
    log.info("%d events in, %d out", len(track), len(fixed))
    return 0


def cmd_map_lanes(args) -> int:
    notes = parse_pitched_notes(Path(args.notes).read_text(encoding="utf-8"))
    track = lanes_track(notes, Instrument(args.instrument), args.window)
    Path(args.output).write_text(format_prediction_file(track), encoding="utf-8")
    return 0


def _tracks_from(path: Path) -> list:
    if path.is_dir():
        files = sorted(path.glob("*.tsv"))
    else:
        files = [path]
    tracks = []
    for f in files:
        inst = f.stem if f.stem in {i.value for i in Instrument} else None
        tracks.append(parse_prediction_file(f.read_text(encoding="utf-8"), inst))
    return tracks


def cmd_convert(args) -> int:
    src, dst = Path(args.input), Path(args.output)
    if src.suffix.lower() in (".mid", ".midi"):
        write_prediction_dir(parse_chart_midi(src.read_bytes()), dst)
        return 0
    tracks = _tracks_from(src)
    chart = Chart({t.instrument: t for t in tracks}, TempoMap.constant(args.bpm), args.resolution)
    dst.write_bytes(emit_chart_midi(chart))
    return 0


# -- parser --------------------------------------------------------------------------


def _add_eval_flags(p):
    p.add_argument("--tol", type=float, default=DEFAULT_TOLERANCE, help="match tolerance in seconds")
    p.add_argument("--offset-range", type=float, default=OFFSET_RANGE, help="offset search half-width (s)")
    p.add_argument("--offset-step", type=float, default=OFFSET_STEP, help="offset search step (s)")
    p.add_argument("--gt-root", help="directory ground-truth chart paths are relative to")
    p.add_argument("--include-failed", action="store_true", help="also score songs that failed screening")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chartbench", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("screen", help="apply the drum-stem RMS operating-envelope screen")
    p.add_argument("manifest")
    p.add_argument("--audio-root", help=f"audio path root (default: ${AUDIO_ROOT_ENV} or the manifest's folder)")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--out", default="out/screen")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_screen)

    p = sub.add_parser("sample", help="seeded genre-capped draw from screened songs")
    p.add_argument("manifest")
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--cap", type=int, default=6)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="onset P/R/F1 with per-song offset search")
    p.add_argument("manifest")
    p.add_argument("predictions")
    _add_eval_flags(p)
    p.add_argument("--out", default="out/evaluate")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="paired per-song ablation statistics")
    p.add_argument("manifest")
    p.add_argument("full")
    p.add_argument("ablated", nargs="+")
    p.add_argument("--component", action="append", help="name for each ablated directory, in order")
    _add_eval_flags(p)
    p.add_argument("--out", default="out/ablate")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("ceiling", help="ground-truth to audio-onset offset analysis")
    p.add_argument("manifest")
    p.add_argument("--tol", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--source", choices=("mix", "stem"), default="mix")
    p.add_argument("--audio-root")
    p.add_argument("--gt-root")
    p.add_argument("--out", default="out/ceiling")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_ceiling)

    p = sub.add_parser("tempo", help="BPM, phase coherence and tempo changes of a WAV")
    p.add_argument("audio")
    p.add_argument("--no-changes", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tempo)

    p = sub.add_parser("correct", help="run the rule-based drum correctors on a prediction file")
    p.add_argument("predictions")
    p.add_argument("stem")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--disable", action="append", choices=RULES, help="rule to switch off (repeatable)")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("map-lanes", help="map pitched notes to 5-fret lanes")
    p.add_argument("notes")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--instrument", choices=("guitar", "bass", "keys"), default="guitar")
    p.add_argument("--window", type=int, default=TONIC_WINDOW)
    p.set_defaults(func=cmd_map_lanes)

    p = sub.add_parser("convert", help="notes.mid <-> prediction files")
    p.add_argument("input", help=".mid file, or a .tsv file / directory of <instrument>.tsv")
    p.add_argument("output", help="directory (from .mid) or .mid path")
    p.add_argument("--bpm", type=float, default=120.0)
    p.add_argument("--resolution", type=int, default=480)
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
