"""Command-line interface.

Subcommands: make-toy-corpus, prepare-data, train-arranger, train-predictor,
evaluate, run-stream, serve, dump-features.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .core import ChordMap, Tonality, load_scores_jsonl, tonic_triad


def _add_chordmap_arg(parser):
    parser.add_argument("--chordmap", default=None, help="chord table JSON override")


def _chordmap(args):
    return ChordMap.from_file(args.chordmap) if args.chordmap else ChordMap.default()


def cmd_make_toy_corpus(args):
    from .dataio import write_toy_corpus

    pieces = write_toy_corpus(args.out, n_pieces=args.pieces, seed=args.seed,
                              include_rejects=not args.clean_only)
    print(f"wrote {len(pieces)} raw pieces to {args.out}")
    return 0


def cmd_prepare_data(args):
    from .dataio import prepare_corpus

    scores, rejected = prepare_corpus(args.in_dir, args.out, args.reject_log, _chordmap(args))
    print(f"kept {len(scores)} pieces, rejected {len(rejected)}")
    for piece_id, reason in rejected:
        print(f"  rejected {piece_id}: {reason}")
    return 0


def cmd_train_arranger(args):
    from .arranger import ChordArranger

    chordmap = _chordmap(args)
    scores = load_scores_jsonl(args.corpus, chordmap)
    arranger = ChordArranger(
        preset=args.preset, epochs=args.epochs, seed=args.seed, chordmap=chordmap,
        target_accuracy=args.target_accuracy,
    )
    started = time.time()
    arranger.fit(scores)
    accuracy = arranger.accuracy(scores)
    arranger.save(args.out)
    print(
        f"trained {args.preset} arranger: {len(arranger.loss_history_)} epochs, "
        f"beat-chord accuracy {accuracy:.3f}, {time.time() - started:.1f}s -> {args.out}"
    )
    return 0


def cmd_train_predictor(args):
    from .crf import ChordPredictor, parse_templates
    from .features import FeatureAnnotator
    from .stream import observation_sequences

    chordmap = _chordmap(args)
    scores = load_scores_jsonl(args.corpus, chordmap)
    sequences = observation_sequences(scores, chordmap)
    templates = None
    if args.templates:
        with open(args.templates) as fh:
            templates = parse_templates(fh.read())
    predictor = ChordPredictor(
        templates=templates,
        max_iterations=args.max_iter,
        min_feature_frequency=args.freq,
        regularization_cost=args.cost,
    )
    predictor.fit(sequences)
    predictor.save(args.out)
    print(
        f"trained predictor on {len(sequences)} sequences, "
        f"{len(predictor.model_.feature_ids)} features, "
        f"{len(predictor.labels_)} labels -> {args.out}"
    )
    return 0


def cmd_evaluate(args):
    from .metrics import MetricReport, difference_report, mean_report, metric_report

    chordmap = _chordmap(args)
    scores = load_scores_jsonl(args.score, chordmap)
    report = mean_report([metric_report(s, chordmap) for s in scores])
    result = {"metrics": report.as_dict()}
    if args.against:
        reference_scores = load_scores_jsonl(args.against, chordmap)
        reference = mean_report([metric_report(s, chordmap) for s in reference_scores])
        result["reference"] = reference.as_dict()
        result["difference"] = difference_report(report, reference)
    if args.report == "json":
        print(json.dumps(result, indent=2))
    else:
        names = MetricReport.names()
        print("metric,value" + (",reference,difference" if args.against else ""))
        for name in names:
            row = f"{name},{result['metrics'][name]:.6f}"
            if args.against:
                row += f",{result['reference'][name]:.6f},{result['difference'][name]:+.6f}"
            print(row)
    return 0


def cmd_dump_features(args):
    from .features import FeatureAnnotator, dump_features_jsonl

    chordmap = _chordmap(args)
    scores = load_scores_jsonl(args.score, chordmap)
    annotator = FeatureAnnotator(chordmap)
    for score in scores:
        annotations = annotator.transform(score)
        out = Path(args.out) / f"{score.piece_id or 'piece'}.features.jsonl"
        Path(args.out).mkdir(parents=True, exist_ok=True)
        dump_features_jsonl(score, annotations, chordmap, out)
        print(f"wrote {out}")
    return 0


def _load_melody_steps(path):
    """Melody steps from an NDJSON wire log or a score JSONL file."""
    steps = []
    with open(path) if path != "-" else sys.stdin as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("type") == "melody_in":
                steps.append((int(obj["step"]), obj.get("pitch")))
            elif "melody" in obj:
                for step, pitch in enumerate(obj["melody"]):
                    steps.append((step, pitch))
                break
    return steps


def cmd_run_stream(args):
    from .arranger import ChordArranger, RuleBasedArranger
    from .crf import ChordPredictor
    from .stream import HoldLastPredictor, RealtimeClock, SimulatedClock, StreamSession
    from .texture import TextureEngine, load_pattern_library

    chordmap = _chordmap(args)
    tonality = Tonality(args.tonic, args.mode)
    arranger = (
        ChordArranger.load(args.arranger) if args.arranger else RuleBasedArranger(chordmap)
    )
    if args.predictor:
        predictor = ChordPredictor.from_checkpoint(args.predictor)
    else:
        predictor = HoldLastPredictor(tonic_triad(tonality, chordmap).label(chordmap))
    clock = SimulatedClock(args.bpm) if args.clock == "sim" else RealtimeClock(args.bpm)
    library = load_pattern_library(args.patterns) if args.patterns else None
    texture = TextureEngine(library)

    session = StreamSession(arranger, predictor, chordmap, tonality, clock=clock,
                            texture=texture)
    steps = _load_melody_steps(args.input)
    started = time.time()
    events = list(session.start())
    for step, pitch in steps:
        events.extend(session.feed(step, pitch))
    events.extend(session.end())
    elapsed = time.time() - started

    sink = open(args.out, "w") if args.out else sys.stdout
    try:
        for event in events:
            sink.write(event.to_json() + "\n")
    finally:
        if args.out:
            sink.close()

    report = session.latency_report()
    print(
        f"# {report.beats} beats in {elapsed:.2f}s wall; "
        f"emit margin mean {report.emit_margin_beats_mean:.3f} beats; "
        f"physical latency p99 {report.physical_latency_us_p99 / 1000.0:.2f} ms; "
        f"underruns {report.underruns}",
        file=sys.stderr,
    )

    if args.emit_midi:
        _write_stream_midi(events, session, args.emit_midi, args.bpm)
        print(f"# accompaniment written to {args.emit_midi}", file=sys.stderr)
    return 0


def _write_stream_midi(events, session, path, bpm):
    from dataclasses import dataclass

    from .core import Score, Chord, REST
    from .dataio import export_midi

    @dataclass
    class Ev:
        pitch: int
        onset_beats: float
        duration_beats: float
        instrument: str
        velocity: int

    track_events = []
    chords = []
    for event in events:
        if event.kind == "accomp_out":
            chords.append(tuple(event.payload["chord"]))
            for t in event.payload["tracks"]:
                track_events.append(
                    Ev(t["pitch"], t["onset"], t["dur"], t["instr"], t["vel"])
                )
    melody = list(session.melody)
    beats = len(melody) // 4
    if beats == 0:
        return
    bpb = session.ts.beats_per_bar
    beats -= beats % bpb
    if beats == 0:
        return
    melody = melody[: 4 * beats]
    chord_objs = []
    for b in range(beats):
        pitches = chords[b] if b < len(chords) else chords[-1]
        chord_objs.append(session.chordmap.chord_from_pitches(pitches))
    score = Score(tuple(melody), tuple(chord_objs), session.tonality,
                  session.ts, bpm, "stream")
    export_midi(score, track_events, path)


def cmd_serve(args):
    from .service import SessionFactory, run_stdio, serve_forever

    factory = SessionFactory(args.arranger, args.predictor, args.patterns, _chordmap(args))
    if args.transport == "stdio":
        run_stdio(factory, sys.stdin, sys.stdout)
        return 0
    print(f"serving ws://{args.host}:{args.port}/stream", file=sys.stderr, flush=True)
    serve_forever(factory, args.host, args.port)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="chordflow",
                                     description="real-time melody accompaniment engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy-corpus", help="write the bundled toy corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--pieces", type=int, default=30)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--clean-only", action="store_true")
    p.set_defaults(func=cmd_make_toy_corpus)

    p = sub.add_parser("prepare-data", help="screen + normalize raw corpus")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reject-log", default=None)
    _add_chordmap_arg(p)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train-arranger", help="train the arrangement model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=["paper", "desk"], default="desk")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-accuracy", type=float, default=0.97)
    _add_chordmap_arg(p)
    p.set_defaults(func=cmd_train_arranger)

    p = sub.add_parser("train-predictor", help="train the CRF predictor")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--templates", default=None)
    p.add_argument("--max-iter", type=int, default=35)
    p.add_argument("--freq", type=int, default=3)
    p.add_argument("--cost", type=float, default=4.0)
    _add_chordmap_arg(p)
    p.set_defaults(func=cmd_train_predictor)

    p = sub.add_parser("evaluate", help="objective metrics over a score file")
    p.add_argument("--score", required=True)
    p.add_argument("--against", default=None)
    p.add_argument("--report", choices=["json", "csv"], default="json")
    _add_chordmap_arg(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("dump-features", help="per-beat feature annotations")
    p.add_argument("--score", required=True)
    p.add_argument("--out", required=True)
    _add_chordmap_arg(p)
    p.set_defaults(func=cmd_dump_features)

    p = sub.add_parser("run-stream", help="drive the pipeline over a melody")
    p.add_argument("--input", required=True, help="NDJSON melody_in log, score JSONL, or -")
    p.add_argument("--clock", choices=["sim", "rt"], default="sim")
    p.add_argument("--bpm", type=float, default=80.0)
    p.add_argument("--tonic", type=int, default=0)
    p.add_argument("--mode", choices=["major", "minor"], default="major")
    p.add_argument("--arranger", default=None)
    p.add_argument("--predictor", default=None)
    p.add_argument("--patterns", default=None)
    p.add_argument("--emit-midi", default=None)
    p.add_argument("--out", default=None, help="event log destination (default stdout)")
    p.add_argument("--seed", type=int, default=0)
    _add_chordmap_arg(p)
    p.set_defaults(func=cmd_run_stream)

    p = sub.add_parser("serve", help="run the streaming service")
    p.add_argument("--transport", choices=["ws", "stdio"], default="ws")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--arranger", default=None)
    p.add_argument("--predictor", default=None)
    p.add_argument("--patterns", default=None)
    _add_chordmap_arg(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
