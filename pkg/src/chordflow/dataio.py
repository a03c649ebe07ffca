"""Corpus normalization and storage: rhythm screening, octave placement,
mode unification, raw-piece JSON, the bundled toy corpus, and MIDI bridging.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

from sklearn.base import BaseEstimator, TransformerMixin

from . import midi as smf
from .core import REST, Chord, Score, TimeSignature, Tonality, sample_score
from .validation import as_grid_fraction

MELODY_OCTAVE_LOW = 60   # row 6 of the pitch table: C4..B4
ACCOMP_OCTAVE_LOW = 36   # row 4: C2..B2


@dataclass(frozen=True)
class NoteEvent:
    pitch: int
    onset: Fraction     # beats
    duration: Fraction  # beats


@dataclass(frozen=True)
class ChordEvent:
    pitches: tuple
    onset: Fraction
    duration: Fraction


@dataclass(frozen=True)
class RawPiece:
    piece_id: str
    bpm: float
    time_signature: str          # e.g. "4/4"; screening rejects unsupported ones
    tonality: Tonality
    notes: tuple                 # NoteEvents, time ordered
    chords: tuple                # ChordEvents, time ordered

    def shifted(self, melody_shift, accomp_shift):
        return replace(
            self,
            notes=tuple(
                NoteEvent(n.pitch + melody_shift, n.onset, n.duration) for n in self.notes
            ),
            chords=tuple(
                ChordEvent(
                    tuple(p + accomp_shift for p in c.pitches), c.onset, c.duration
                )
                for c in self.chords
            ),
        )


def raw_piece_to_dict(piece):
    return {
        "id": piece.piece_id,
        "bpm": piece.bpm,
        "time_signature": piece.time_signature,
        "tonality": {"tonic": piece.tonality.tonic, "mode": piece.tonality.mode},
        "notes": [[n.pitch, float(n.onset), float(n.duration)] for n in piece.notes],
        "chords": [
            [list(c.pitches), float(c.onset), float(c.duration)] for c in piece.chords
        ],
    }


def raw_piece_from_dict(obj):
    return RawPiece(
        piece_id=str(obj["id"]),
        bpm=float(obj.get("bpm", 80.0)),
        time_signature=str(obj.get("time_signature", "4/4")),
        tonality=Tonality(obj["tonality"]["tonic"], obj["tonality"]["mode"]),
        notes=tuple(
            NoteEvent(int(p), Fraction(o).limit_denominator(64), Fraction(d).limit_denominator(64))
            for p, o, d in obj.get("notes", [])
        ),
        chords=tuple(
            ChordEvent(tuple(int(p) for p in ps), Fraction(o).limit_denominator(64),
                       Fraction(d).limit_denominator(64))
            for ps, o, d in obj.get("chords", [])
        ),
    )


# ------------------------------------------------------------- screening

def screen_rhythm(piece):
    """Accept only 4/4 and 2/4 pieces without sub-beat chords.

    Returns (accepted, reason); reason is None when accepted.
    """
    if piece.time_signature not in ("4/4", "2/4"):
        return False, "time_signature"
    for chord in piece.chords:
        if chord.duration < 1:
            return False, "short_chord"
    return True, None


# ---------------------------------------------------------- transposition

def _octave_shift(mean_pitch, low):
    """Whole-octave shift placing the mean inside [low, low+12)."""
    if mean_pitch is None:
        return 0
    shift = 0
    while mean_pitch + shift < low:
        shift += 12
    while mean_pitch + shift >= low + 12:
        shift -= 12
    return shift


def transpose_octave(piece):
    """Shift the melody into the C4 octave row and the accompaniment into
    the C2 row by whole octaves; pitch classes are untouched.

    Means are duration-weighted so they match the note distribution of the
    sampled representation.
    """
    melody_mass = sum(n.duration for n in piece.notes)
    melody_mean = (
        float(sum(n.pitch * n.duration for n in piece.notes) / melody_mass)
        if melody_mass
        else None
    )
    accomp_mass = sum(len(c.pitches) * c.duration for c in piece.chords)
    accomp_mean = (
        float(
            sum(p * c.duration for c in piece.chords for p in c.pitches) / accomp_mass
        )
        if accomp_mass
        else None
    )
    return piece.shifted(
        _octave_shift(melody_mean, MELODY_OCTAVE_LOW),
        _octave_shift(accomp_mean, ACCOMP_OCTAVE_LOW),
    )


def unify_mode(piece):
    """Transpose to C major / A minor with the minimal shift in (-6, +6]."""
    target = 0 if piece.tonality.mode == "major" else 9
    delta = (target - piece.tonality.tonic + 5) % 12 - 5
    shifted = piece.shifted(delta, delta)
    return replace(shifted, tonality=Tonality(target, piece.tonality.mode))


def normalize_piece(piece):
    """Screen, then normalize one piece; returns (piece|None, reason|None).

    Mode unification runs before octave placement so the pipeline is
    idempotent: the mode shift can move the mean out of the octave row, and
    placing octaves last makes a second pass a no-op.
    """
    accepted, reason = screen_rhythm(piece)
    if not accepted:
        return None, reason
    return transpose_octave(unify_mode(piece)), None


class CorpusNormalizer(BaseEstimator, TransformerMixin):
    """Transform-shaped wrapper over the normalization pipeline."""

    def fit(self, X=None, y=None):
        return self

    def transform(self, pieces):
        kept = []
        rejected = []
        for piece in pieces:
            cleaned, reason = normalize_piece(piece)
            if cleaned is None:
                rejected.append((piece.piece_id, reason))
            else:
                kept.append(cleaned)
        self.rejected_ = rejected
        return kept


def piece_to_score(piece, chordmap=None):
    ts = TimeSignature.parse(piece.time_signature)
    return sample_score(
        [(n.pitch, n.onset, n.duration) for n in piece.notes],
        [(c.pitches, c.onset, c.duration) for c in piece.chords],
        piece.tonality,
        ts,
        piece.bpm,
        piece.piece_id,
        chordmap=chordmap,
    )


def prepare_corpus(in_dir, out_dir, reject_log=None, chordmap=None):
    """CLI pipeline: read corpus/raw/*.json, normalize, write clean JSONL.

    Returns (scores, rejected)."""
    in_dir = Path(in_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pieces = []
    for path in sorted(in_dir.glob("*.json")):
        with open(path) as fh:
            pieces.append(raw_piece_from_dict(json.load(fh)))
    normalizer = CorpusNormalizer()
    cleaned = normalizer.transform(pieces)
    scores = [piece_to_score(p, chordmap) for p in cleaned]
    from .core import save_scores_jsonl

    save_scores_jsonl(scores, out_dir / "pieces.jsonl")
    if reject_log:
        with open(reject_log, "w") as fh:
            for piece_id, reason in normalizer.rejected_:
                fh.write(json.dumps({"id": piece_id, "reason": reason}) + "\n")
    return scores, normalizer.rejected_


# ------------------------------------------------------------ toy corpus

_PROGRESSIONS = [
    [1, 4, 5, 1],
    [1, 6, 4, 5],
    [1, 5, 6, 4],
    [2, 5, 1, 1],
    [1, 4, 1, 5],
    [6, 4, 1, 5],
]

_FOLK_TUNES = [
    # (id, tonality, bars of (melody degrees per beat, chord degree per bar))
    (
        "folk-twinkle",
        Tonality(0, "major"),
        [1, 1, 5, 5, 6, 6, 5, 5, 4, 4, 3, 3, 2, 2, 1, 1],
        [1, 1, 4, 1, 4, 1, 5, 1],
    ),
    (
        "folk-ode",
        Tonality(7, "major"),
        [3, 3, 4, 5, 5, 4, 3, 2, 1, 1, 2, 3, 3, 2, 2, 2],
        [1, 5, 1, 5, 1, 5, 5, 1],
    ),
]


def _scale_pitch(tonality, degree, octave=5):
    from .core import chord_degrees

    pcs = chord_degrees(tonality)
    return 12 * octave + pcs[(degree - 1) % 7]


def _degree_triad_pitches(tonality, degree, octave=3):
    from .core import chord_degrees

    pcs = chord_degrees(tonality)
    roots = [pcs[(degree - 1) % 7], pcs[(degree + 1) % 7], pcs[(degree + 3) % 7]]
    pitches = []
    cursor = 12 * octave + roots[0]
    for pc in roots:
        while cursor % 12 != pc:
            cursor += 1
        pitches.append(cursor)
        cursor += 1
    return tuple(pitches)


def make_toy_corpus(n_pieces=30, seed=7, include_rejects=False):
    """Deterministic bundled corpus: I-IV-V-I style progressions with
    chord-tone melodies, plus two public-domain folk snippets."""
    rng = random.Random(seed)
    pieces = []
    tonics = [0, 2, 5, 7, 9, 4]
    for i in range(n_pieces - len(_FOLK_TUNES)):
        mode = "major" if i % 3 else "minor"
        tonality = Tonality(tonics[i % len(tonics)], mode)
        ts = "2/4" if i % 7 == 3 else "4/4"
        bpb = 2 if ts == "2/4" else 4
        n_bars = rng.choice([8, 12, 16])
        progression = rng.choice(_PROGRESSIONS)
        def build_melody(chords):
            notes = []
            melody_octave = rng.choice([4, 5, 6])
            center = 12 * melody_octave + 7
            previous = center
            for bar in range(n_bars):
                degree = progression[bar % len(progression)]
                if bar == n_bars - 1:
                    degree = 1
                elif bar == n_bars - 2:
                    degree = 5
                chord_pitches = chords[bar].pitches
                beat = Fraction(0)
                while beat < bpb:
                    dur = Fraction(rng.choice([1, 1, 2, Fraction(1, 2)]))
                    if beat + dur > bpb:
                        dur = Fraction(bpb) - beat
                    tone = rng.choice([0, 1, 2, 2])
                    pc = chord_pitches[tone % 3] % 12
                    if rng.random() < 0.2:
                        pc = _scale_pitch(tonality, degree + rng.choice([1, 3]), 0) % 12
                    # voice-leading placement: the octave nearest the
                    # previous note keeps the melody register compact
                    pitch = min(
                        (pc + 12 * k for k in range(3, 8)),
                        key=lambda c: (abs(c - previous), abs(c - center)),
                    )
                    if abs(pitch - center) > 9:
                        pitch += 12 if pitch < center else -12
                    if rng.random() < 0.1 and beat > 0:
                        pass  # leave a rest
                    else:
                        notes.append(NoteEvent(pitch, Fraction(bar * bpb) + beat, dur))
                        previous = pitch
                    beat += dur
            return notes

        chords = []
        for bar in range(n_bars):
            degree = progression[bar % len(progression)]
            if bar == n_bars - 1:
                degree = 1  # close on the tonic
            elif bar == n_bars - 2:
                degree = 5  # final cadence
            chord_pitches = _degree_triad_pitches(tonality, degree, octave=3)
            chords.append(ChordEvent(chord_pitches, Fraction(bar * bpb), Fraction(bpb)))

        # keep the normalized melody mean clear of the octave-row edges
        # (a mean hugging the B/C seam cannot land in C4..B4 by any whole-
        # octave shift, so such drafts are re-rolled)
        target = 0 if mode == "major" else 9
        unify_shift = (target - tonality.tonic + 5) % 12 - 5
        notes = []
        for _attempt in range(16):
            notes = build_melody(chords)
            mass = sum(n.duration for n in notes)
            mean = sum(n.pitch * n.duration for n in notes) / mass
            if 0.5 <= (mean + unify_shift) % 12 <= 10.5:
                break
        pieces.append(
            RawPiece(f"toy-{i:03d}", 80.0, ts, tonality, tuple(notes), tuple(chords))
        )
    for piece_id, tonality, degrees, chord_degrees_per_bar in _FOLK_TUNES:
        notes = [
            NoteEvent(_scale_pitch(tonality, d), Fraction(b), Fraction(1))
            for b, d in enumerate(degrees)
        ]
        chords = [
            ChordEvent(_degree_triad_pitches(tonality, d), Fraction(4 * b), Fraction(4))
            for b, d in enumerate(chord_degrees_per_bar[: len(degrees) // 4])
        ]
        pieces.append(RawPiece(piece_id, 80.0, "4/4", tonality, tuple(notes), tuple(chords)))
    if include_rejects:
        pieces.append(
            RawPiece(
                "bad-waltz", 80.0, "3/4", Tonality(0, "major"),
                (NoteEvent(60, Fraction(0), Fraction(3)),),
                (ChordEvent((48, 52, 55), Fraction(0), Fraction(3)),),
            )
        )
        pieces.append(
            RawPiece(
                "bad-short-chord", 80.0, "4/4", Tonality(0, "major"),
                (NoteEvent(60, Fraction(0), Fraction(4)),),
                (
                    ChordEvent((48, 52, 55), Fraction(0), Fraction(1, 2)),
                    ChordEvent((50, 53, 57), Fraction(1, 2), Fraction(7, 2)),
                ),
            )
        )
    return pieces


def write_toy_corpus(out_dir, n_pieces=30, seed=7, include_rejects=True):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pieces = make_toy_corpus(n_pieces, seed, include_rejects)
    for piece in pieces:
        with open(out_dir / f"{piece.piece_id}.json", "w") as fh:
            json.dump(raw_piece_to_dict(piece), fh)
    return pieces


# ------------------------------------------------------------------ MIDI

def export_midi(score, track_events=None, path="out.mid"):
    """Write a score (and optional rendered accompaniment tracks) as SMF.

    Track layout: melody, chords, then one track per distinct instrument in
    ``track_events`` (events carry .pitch/.onset_beats/.duration_beats/
    .instrument/.velocity).
    """
    tpq = smf.TICKS_PER_QUARTER
    data = smf.MidiData(bpm=score.bpm, numerator=score.time_signature.beats_per_bar,
                        denominator=4, tracks=[])
    melody_track = smf.MidiTrack(name="melody", program=0)
    from .core import melody_to_events

    for pitch, onset, dur in melody_to_events(score.melody):
        melody_track.notes.append(
            smf.MidiNote(pitch, int(onset * tpq), int(dur * tpq), 90)
        )
    data.tracks.append(melody_track)

    chord_track = smf.MidiTrack(name="chords", program=0)
    b = 0
    while b < score.n_beats:
        j = b
        while j < score.n_beats and score.chords[j].pitches == score.chords[b].pitches:
            j += 1
        for pitch in score.chords[b].pitches:
            chord_track.notes.append(smf.MidiNote(pitch, b * tpq, (j - b) * tpq, 70))
        b = j
    data.tracks.append(chord_track)

    if track_events:
        by_instrument = {}
        for ev in track_events:
            by_instrument.setdefault(ev.instrument, []).append(ev)
        for name in sorted(by_instrument):
            track = smf.MidiTrack(name=name.lower(), program=smf.PROGRAMS.get(name, 0))
            for ev in by_instrument[name]:
                track.notes.append(
                    smf.MidiNote(
                        ev.pitch,
                        int(Fraction(ev.onset_beats) * tpq),
                        int(Fraction(ev.duration_beats) * tpq),
                        ev.velocity,
                    )
                )
            data.tracks.append(track)
    return smf.write_midi(data, path)


def import_midi(path, tonality=Tonality(0, "major")):
    """Read an SMF back into a RawPiece (melody + chords tracks)."""
    data = smf.read_midi(path)
    tpq = data.ticks_per_quarter
    notes = []
    chords = []
    melody_track = next((t for t in data.tracks if t.name == "melody"), None)
    chord_track = next((t for t in data.tracks if t.name == "chords"), None)
    if melody_track is None and data.tracks:
        melody_track = data.tracks[0]
    if melody_track:
        for note in melody_track.notes:
            notes.append(
                NoteEvent(
                    note.pitch,
                    Fraction(note.onset_ticks, tpq),
                    Fraction(note.duration_ticks, tpq),
                )
            )
    if chord_track:
        grouped = {}
        for note in chord_track.notes:
            grouped.setdefault((note.onset_ticks, note.duration_ticks), []).append(note.pitch)
        for (onset, dur), pitches in sorted(grouped.items()):
            chords.append(
                ChordEvent(tuple(sorted(pitches)), Fraction(onset, tpq), Fraction(dur, tpq))
            )
    ts = f"{data.numerator}/{data.denominator}"
    return RawPiece("imported", data.bpm, ts, tonality, tuple(notes), tuple(chords))
