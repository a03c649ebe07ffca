import json
from fractions import Fraction

import pytest

from chordflow.core import REST, Tonality, melody_to_events
from chordflow.dataio import (
    ChordEvent,
    CorpusNormalizer,
    NoteEvent,
    RawPiece,
    export_midi,
    import_midi,
    make_toy_corpus,
    normalize_piece,
    piece_to_score,
    prepare_corpus,
    raw_piece_from_dict,
    raw_piece_to_dict,
    screen_rhythm,
    transpose_octave,
    unify_mode,
    write_toy_corpus,
)


def _piece(ts="4/4", tonality=Tonality(7, "major"), melody_octave=4, chord_octave=4):
    notes = tuple(
        NoteEvent(12 * melody_octave + p, Fraction(b), Fraction(1))
        for b, p in enumerate([7, 9, 11, 7])
    )
    chords = (
        ChordEvent(tuple(12 * chord_octave + p for p in (7, 11, 14)), Fraction(0), Fraction(4)),
    )
    return RawPiece("p1", 80.0, ts, tonality, notes, chords)


class TestScreening:
    def test_waltz_rejected(self):
        accepted, reason = screen_rhythm(_piece(ts="3/4"))
        assert not accepted and reason == "time_signature"

    def test_short_chord_rejected(self):
        piece = _piece()
        piece = RawPiece(
            piece.piece_id, piece.bpm, piece.time_signature, piece.tonality,
            piece.notes,
            (ChordEvent((48, 52, 55), Fraction(0), Fraction(1, 2)),),
        )
        accepted, reason = screen_rhythm(piece)
        assert not accepted and reason == "short_chord"

    def test_clean_two_four_accepted(self):
        accepted, reason = screen_rhythm(_piece(ts="2/4"))
        assert accepted and reason is None


class TestTransposeOctave:
    def test_low_melody_shifted_up(self):
        piece = _piece(melody_octave=3)  # mean pitch ~ 44.5
        out = transpose_octave(piece)
        mean = sum(n.pitch for n in out.notes) / len(out.notes)
        assert 60 <= mean < 72
        assert all(
            (a.pitch - b.pitch) % 12 == 0 for a, b in zip(out.notes, piece.notes)
        )

    def test_in_range_untouched(self):
        piece = _piece(melody_octave=5)  # mean ~ 68.5
        out = transpose_octave(piece)
        assert [n.pitch for n in out.notes] == [n.pitch for n in piece.notes]

    def test_accomp_shifted_down(self):
        piece = _piece(chord_octave=4)  # accomp mean ~ 59
        out = transpose_octave(piece)
        pitches = [p for c in out.chords for p in c.pitches]
        assert 36 <= sum(pitches) / len(pitches) < 48


class TestUnifyMode:
    def test_g_major_up_five(self):
        out = unify_mode(_piece())
        assert out.tonality == Tonality(0, "major")
        # +5 beats -7: shift must lie in (-6, +6]
        assert out.notes[0].pitch - _piece().notes[0].pitch == 5

    def test_a_minor_untouched(self):
        piece = _piece(tonality=Tonality(9, "minor"))
        out = unify_mode(piece)
        assert out.tonality == Tonality(9, "minor")
        assert [n.pitch for n in out.notes] == [n.pitch for n in piece.notes]

    def test_e_minor_up_five(self):
        piece = _piece(tonality=Tonality(4, "minor"))
        out = unify_mode(piece)
        assert out.tonality == Tonality(9, "minor")
        assert out.notes[0].pitch - piece.notes[0].pitch == 5


class TestPipeline:
    def test_idempotent(self):
        for octave in (3, 4, 5, 6):
            piece = _piece(melody_octave=octave)
            once, _ = normalize_piece(piece)
            twice, _ = normalize_piece(once)
            assert raw_piece_to_dict(once) == raw_piece_to_dict(twice)

    def test_tonic_normalized(self):
        for tonic in range(12):
            for mode in ("major", "minor"):
                piece = _piece(tonality=Tonality(tonic, mode))
                out, _ = normalize_piece(piece)
                assert out.tonality.tonic == (0 if mode == "major" else 9)

    def test_pitch_classes_preserved_by_octave_step(self):
        piece = _piece(melody_octave=2)
        out = transpose_octave(piece)
        assert [n.pitch % 12 for n in out.notes] == [n.pitch % 12 for n in piece.notes]


class TestToyCorpus:
    def test_deterministic(self):
        a = make_toy_corpus(10, seed=3)
        b = make_toy_corpus(10, seed=3)
        assert [raw_piece_to_dict(p) for p in a] == [raw_piece_to_dict(p) for p in b]

    def test_size_and_folk_inclusion(self):
        corpus = make_toy_corpus(30, seed=7)
        assert len(corpus) == 30
        ids = [p.piece_id for p in corpus]
        assert "folk-twinkle" in ids and "folk-ode" in ids

    def test_all_pieces_survive_screening(self):
        for piece in make_toy_corpus(30, seed=7):
            assert screen_rhythm(piece)[0]

    def test_rejects_included_when_asked(self):
        corpus = make_toy_corpus(10, seed=7, include_rejects=True)
        reasons = {screen_rhythm(p)[1] for p in corpus}
        assert "time_signature" in reasons and "short_chord" in reasons

    def test_pieces_sample_into_scores(self, chordmap):
        for piece in make_toy_corpus(8, seed=1):
            score = piece_to_score(piece, chordmap)
            assert score.n_beats >= 8


class TestPrepareCorpus(object):
    def test_end_to_end(self, tmp_path, chordmap):
        raw_dir = tmp_path / "raw"
        write_toy_corpus(raw_dir, n_pieces=8, seed=5, include_rejects=True)
        out_dir = tmp_path / "clean"
        reject_log = tmp_path / "rejects.jsonl"
        scores, rejected = prepare_corpus(raw_dir, out_dir, reject_log, chordmap)
        assert len(scores) == 8
        assert {r for _, r in rejected} == {"time_signature", "short_chord"}
        assert (out_dir / "pieces.jsonl").exists()
        with open(reject_log) as fh:
            logged = [json.loads(line) for line in fh]
        assert len(logged) == 2
        for score in scores:
            expected = 0 if score.tonality.mode == "major" else 9
            assert score.tonality.tonic == expected
            sounding = [p for p in score.melody if p != REST]
            assert 60 <= sum(sounding) / len(sounding) < 72

    def test_raw_piece_json_round_trip(self):
        piece = _piece()
        back = raw_piece_from_dict(json.loads(json.dumps(raw_piece_to_dict(piece))))
        assert raw_piece_to_dict(back) == raw_piece_to_dict(piece)


class TestMidiRoundTrip:
    def test_score_round_trip(self, tmp_path, chordmap):
        piece = make_toy_corpus(5, seed=2)[0]
        cleaned, _ = normalize_piece(piece)
        score = piece_to_score(cleaned, chordmap)
        path = tmp_path / "piece.mid"
        export_midi(score, path=path)
        back = import_midi(path, tonality=score.tonality)
        rebuilt = piece_to_score(back, chordmap)
        assert rebuilt.melody == score.melody
        assert [c.pitches for c in rebuilt.chords] == [c.pitches for c in score.chords]

    def test_empty_score_valid_midi(self, tmp_path, chordmap):
        from chordflow.core import sample_score

        score = sample_score([], [((48, 52, 55), 0, 4)], Tonality(0, "major"))
        path = tmp_path / "empty.mid"
        export_midi(score, path=path)
        data = import_midi(path)
        assert data.bpm == pytest.approx(80.0, abs=0.01)

    def test_texture_track_count(self, tmp_path, chordmap):
        from dataclasses import dataclass

        @dataclass
        class Ev:
            pitch: int
            onset_beats: float
            duration_beats: float
            instrument: str
            velocity: int

        from chordflow.core import sample_score

        score = sample_score([(60, 0, 4)], [((48, 52, 55), 0, 4)], Tonality(0, "major"))
        events = [
            Ev(48, 0.0, 1.0, "Piano", 71),
            Ev(52, 1.0, 1.0, "Piano", 99),
            Ev(36, 0.0, 1.0, "Cello", 71),
            Ev(55, 0.0, 2.0, "Guitar", 60),
        ]
        path = tmp_path / "tex.mid"
        export_midi(score, events, path=path)
        from chordflow.midi import read_midi

        data = read_midi(path)
        # melody + chords + 3 instruments; the tempo track carries no notes
        assert len(data.tracks) == 5
        names = {t.name for t in data.tracks}
        assert {"melody", "chords", "piano", "guitar", "cello"} <= names
