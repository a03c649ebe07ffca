"""chordflow: real-time melody-to-accompaniment engine.

Two phases per beat: an attention model arranges a chord for the beat just
heard and caches it; a linear-chain CRF predicts the playable chord for the
beat about to start from the cached chords and melody, so the accompaniment
is always ready before its beat and never conditions on its own output.
"""

from .arranger import ChordArranger, ChordCache, DecoderToken, EncoderToken, RuleBasedArranger
from .core import (
    REST,
    Chord,
    ChordMap,
    Score,
    TimeSignature,
    Tonality,
    beat_strength,
    chord_degrees,
    chord_edit_cost,
    classify_degree,
    load_scores_jsonl,
    nearest_chordmap_chord,
    sample_score,
    save_scores_jsonl,
    tonic_triad,
)
from .crf import BeatObservation, ChordPredictor, CrfModel, train_crf
from .dataio import (
    RawPiece,
    export_midi,
    import_midi,
    make_toy_corpus,
    normalize_piece,
    piece_to_score,
    prepare_corpus,
    screen_rhythm,
    transpose_octave,
    unify_mode,
)
from .features import (
    FeatureAnnotator,
    splice_segments,
    structural_chord_flag,
    terminal_chord_flags,
    weighted_factors,
    weighted_note_flags,
)
from .metrics import MetricReport, metric_report, metric_timeseries
from .stream import (
    HoldLastPredictor,
    LatencyReport,
    RealtimeClock,
    SimulatedClock,
    StreamEvent,
    StreamSession,
    observation_sequences,
    run_stream,
)
from .texture import TextureEngine, TexturePattern, render, section_classify

__version__ = "0.1.0"

__all__ = [
    "BeatObservation",
    "Chord",
    "ChordArranger",
    "ChordCache",
    "ChordMap",
    "ChordPredictor",
    "CrfModel",
    "DecoderToken",
    "EncoderToken",
    "FeatureAnnotator",
    "HoldLastPredictor",
    "LatencyReport",
    "MetricReport",
    "RawPiece",
    "RealtimeClock",
    "REST",
    "RuleBasedArranger",
    "Score",
    "SimulatedClock",
    "StreamEvent",
    "StreamSession",
    "TextureEngine",
    "TexturePattern",
    "TimeSignature",
    "Tonality",
    "beat_strength",
    "chord_degrees",
    "chord_edit_cost",
    "classify_degree",
    "export_midi",
    "import_midi",
    "load_scores_jsonl",
    "make_toy_corpus",
    "metric_report",
    "metric_timeseries",
    "nearest_chordmap_chord",
    "normalize_piece",
    "observation_sequences",
    "piece_to_score",
    "prepare_corpus",
    "render",
    "run_stream",
    "sample_score",
    "save_scores_jsonl",
    "screen_rhythm",
    "section_classify",
    "splice_segments",
    "structural_chord_flag",
    "terminal_chord_flags",
    "tonic_triad",
    "train_crf",
    "transpose_octave",
    "unify_mode",
    "weighted_factors",
    "weighted_note_flags",
]
