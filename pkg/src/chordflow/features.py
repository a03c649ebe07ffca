"""Long-term musical feature extraction: weighted notes, weighted factors,
terminal chords, and structural chords.

All extractors are pure and streaming-faithful: the answer for beat ``b``
only depends on melody samples up to the end of beat ``b`` and chords up to
``b``, so the same code serves corpus annotation and live generation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from sklearn.base import BaseEstimator, TransformerMixin

from .core import (
    REST,
    UNKNOWN_QUALITY,
    BeatStrength,
    beat_strength,
    chord_degrees,
    classify_degree,
    tonic_triad,
)
from .validation import SIXTEENTH

WEIGHTED_NOTE_WEIGHT = 2
PLAIN_NOTE_WEIGHT = 1

# syncopation: a weak-beat note must last to at least half of the next
# strong or next-strong beat, i.e. 1.5 beats
SYNCOPATION_MIN_DURATION = Fraction(3, 2)


@dataclass(frozen=True)
class NoteDescriptor:
    pitch: int
    onset: Fraction      # beats from piece start
    duration: Fraction   # beats, truncated at the visible frontier
    strength: BeatStrength

    @property
    def end(self):
        return self.onset + self.duration


def notes_in_prefix(melody, n_slots, ts):
    """Run-length decode the first ``n_slots`` sixteenth samples into notes.

    A note's duration is what is visible so far; a pitch still sounding at
    the frontier is truncated there, exactly as a live listener would see it.
    """
    notes = []
    i = 0
    n = min(n_slots, len(melody))
    while i < n:
        pitch = melody[i]
        j = i
        while j < n and melody[j] == pitch:
            j += 1
        if pitch != REST:
            onset = i * SIXTEENTH
            beat_in_bar = int(onset) % ts.beats_per_bar
            notes.append(
                NoteDescriptor(pitch, onset, (j - i) * SIXTEENTH, beat_strength(beat_in_bar, ts))
            )
        i = j
    return notes


def _is_accent(note):
    return note.strength in (BeatStrength.STRONG, BeatStrength.NEXT_STRONG)


def _is_syncopation(note):
    return note.strength == BeatStrength.WEAK and note.duration >= SYNCOPATION_MIN_DURATION


def _long_note(window_notes):
    """The single long note of a window: maximal duration, ties to the latest."""
    best = None
    for note in window_notes:
        if best is None or note.duration > best.duration or (
            note.duration == best.duration and note.onset > best.onset
        ):
            best = note
    return best


def weighted_note_flags(melody, ts):
    """Per-sixteenth weighted-note flags for a sampled melody.

    For each beat, a window of the beat plus its three predecessors is
    examined; a note is weighted when it is an accent that is not a
    syncopation, or a syncopation that is also the window's long note.
    """
    n_slots = len(melody)
    flags = [False] * n_slots
    n_beats = n_slots // 4
    for b in range(n_beats):
        frontier = 4 * (b + 1)
        notes = notes_in_prefix(melody, frontier, ts)
        win_start = Fraction(max(0, b - 3))
        win_end = Fraction(b + 1)
        window = [n for n in notes if n.end > win_start and n.onset < win_end]
        if not window:
            continue
        long_note = _long_note(window)
        for note in window:
            accent = _is_accent(note)
            sync = _is_syncopation(note)
            flagged = (accent and not sync) or (not accent and sync and note is long_note)
            if not flagged:
                continue
            start_slot = int(note.onset / SIXTEENTH)
            end_slot = int(note.end / SIXTEENTH)
            for slot in range(max(start_slot, 4 * b), min(end_slot, frontier)):
                flags[slot] = True
    return flags


def beat_weight_stats(melody, flags, beat):
    """First-stage weighted statistics of one beat: pitch-class weights with
    weighted samples counting 2 and others 1."""
    stats = {}
    for slot in range(4 * beat, min(4 * beat + 4, len(melody))):
        pitch = melody[slot]
        if pitch == REST:
            continue
        w = WEIGHTED_NOTE_WEIGHT if flags[slot] else PLAIN_NOTE_WEIGHT
        pc = pitch % 12
        stats[pc] = stats.get(pc, 0) + w
    return stats


def merge_stats(stats_list):
    merged = {}
    for stats in stats_list:
        for pc, w in stats.items():
            merged[pc] = merged.get(pc, 0) + w
    return merged


def splice_segments(history, chordmap):
    """Greedy backwards splice of per-beat weighted statistics.

    ``history`` holds the stats of each beat oldest-first with the current
    beat last.  Working backwards, the current segment absorbs the previous
    beat while the merged nearest-chord cost does not exceed the separate
    costs plus one; the first increase stops the loop.  Returns the absorbed
    slice of ``history`` (chronological order).
    """
    if not history:
        raise ValueError("history must contain at least the current beat")

    def w(stats):
        if not stats:
            return 0
        return chordmap.nearest(stats)[1]

    segment = [history[-1]]
    merged = dict(history[-1])
    idx = len(history) - 2
    budget = w(history[-1])
    while idx >= 0:
        prev = history[idx]
        w_old = w(merged) + w(prev) + 1
        w_new = w(merge_stats([merged, prev]))
        if w_new > w_old:
            break
        segment.insert(0, prev)
        merged = merge_stats([merged, prev])
        budget += w(prev) + 1
        idx -= 1
    # splicing never raises the cost above the separate-beat budget
    assert w(merged) <= budget, "splice cost invariant violated"
    return segment


class WeightedFactorExtractor:
    """Streaming weighted-factor extraction for one melody stream.

    Call :meth:`step` once per beat with that beat's first-stage statistics;
    the factor is the nearest reference chord of the spliced segment's
    second-stage statistics.  A beat whose segment stays single inherits the
    previous factor; an all-rest beat inherits too; the very first beat
    falls back to its own nearest chord, or the tonic triad when silent.
    """

    def __init__(self, chordmap, tonality, max_history=16):
        self.chordmap = chordmap
        self.tonality = tonality
        self.max_history = max_history
        self.history = []
        self.previous_factor = None

    def step(self, stats):
        if not stats:
            factor = self.previous_factor or tonic_triad(self.tonality, self.chordmap)
            self.previous_factor = factor
            return factor
        self.history.append(stats)
        if len(self.history) > self.max_history:
            del self.history[: len(self.history) - self.max_history]
        segment = splice_segments(self.history, self.chordmap)
        if len(segment) == 1 and self.previous_factor is not None:
            factor = self.previous_factor
        else:
            merged = merge_stats(segment)
            factor = self.chordmap.nearest(merged)[0]
        self.previous_factor = factor
        return factor


def weighted_factors(melody, flags, ts, tonality, chordmap):
    """Per-beat weighted factors for a whole sampled melody."""
    extractor = WeightedFactorExtractor(chordmap, tonality)
    factors = []
    for b in range(len(melody) // 4):
        factors.append(extractor.step(beat_weight_stats(melody, flags, b)))
    return factors


def _has_seventh(chord):
    return any((p - chord.root) % 12 in (10, 11) for p in chord.pitches)


def terminal_chord_flags(chords, tonality, chordmap=None):
    """Cadence completion flags, one per beat.

    A position is flagged when the two-chord progression into it forms a
    perfect (V-I), plagal (IV-I), interrupted (V7-VI) or imperfect
    (any-to-V / any-to-VII, degree actually changing) cadence.
    """
    if chordmap is not None:
        chords = [chordmap.identify(c.pitches) or c for c in chords]
    degrees = [classify_degree(c, tonality) for c in chords]
    flags = [False] * len(chords)
    for i in range(1, len(chords)):
        prev, cur = degrees[i - 1], degrees[i]
        if cur is None:
            continue
        if prev is not None and prev.degree == 5 and cur.degree == 1:
            flags[i] = True
        elif prev is not None and prev.degree == 4 and cur.degree == 1:
            flags[i] = True
        elif (
            prev is not None
            and prev.degree == 5
            and cur.degree == 6
            and _has_seventh(chords[i - 1])
        ):
            flags[i] = True
        elif cur.degree in (5, 7) and (prev is None or prev.degree != cur.degree):
            flags[i] = True
    return flags


def structural_chord_flag(chord, tonality, chordmap):
    """True for non-inverted reference-table chords on degrees I, II, IV, V."""
    ident = chordmap.identify(chord.pitches)
    if ident is None:
        return False
    if ident.inverted:
        return False
    degree = classify_degree(ident, tonality)
    return degree is not None and degree.degree in (1, 2, 4, 5)


@dataclass
class FeatureAnnotations:
    """All four feature tracks for one score."""

    weighted_notes: list           # bool per sixteenth
    factors: list                  # Chord per beat
    terminal: list                 # bool per beat
    structural: list               # bool per beat

    def beat_record(self, beat, chordmap):
        factor = self.factors[beat]
        return {
            "beat": beat,
            "weighted_notes": [bool(f) for f in self.weighted_notes[4 * beat : 4 * beat + 4]],
            "factor": {
                "root": factor.root,
                "quality": chordmap.quality_names[factor.quality]
                if factor.quality != UNKNOWN_QUALITY
                else None,
            },
            "terminal": bool(self.terminal[beat]),
            "structural": bool(self.structural[beat]),
        }


class FeatureAnnotator(BaseEstimator, TransformerMixin):
    """Transformer computing the four feature tracks of a score.

    Stateless; ``fit`` exists for pipeline compatibility only.
    """

    def __init__(self, chordmap=None):
        self.chordmap = chordmap

    def fit(self, X=None, y=None):
        return self

    def _map(self):
        from .core import ChordMap

        return self.chordmap if self.chordmap is not None else ChordMap.default()

    def transform(self, score):
        chordmap = self._map()
        flags = weighted_note_flags(score.melody, score.time_signature)
        factors = weighted_factors(
            score.melody, flags, score.time_signature, score.tonality, chordmap
        )
        terminal = terminal_chord_flags(score.chords, score.tonality, chordmap)
        structural = [
            structural_chord_flag(c, score.tonality, chordmap) for c in score.chords
        ]
        return FeatureAnnotations(flags, factors, terminal, structural)

    def transform_many(self, scores):
        return [self.transform(s) for s in scores]


def dump_features_jsonl(score, annotations, chordmap, path):
    """Debug/pre-annotation dump: one JSON object per beat."""
    import json

    with open(path, "w") as fh:
        for b in range(score.n_beats):
            fh.write(json.dumps(annotations.beat_record(b, chordmap)) + "\n")
