"""Symbolic music data model: pitches, tonalities, chords, the chord
reference table (432 entries), chord edit costs, and the two-array
sampled score representation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from importlib import resources

from .validation import (
    REST,
    SIXTEENTH,
    as_grid_fraction,
    check_beats_per_bar,
    check_melody,
    check_pitch,
    check_pitch_class,
)

UNKNOWN_QUALITY = -1

MAJOR_STEPS = [2, 4, 5, 7, 9, 11]
MINOR_STEPS = [2, 3, 5, 7, 8, 10]

PITCH_NAMES = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"]


class BeatStrength(Enum):
    STRONG = "strong"
    WEAK = "weak"
    NEXT_STRONG = "next_strong"


_STRENGTH_PATTERNS = {
    4: [BeatStrength.STRONG, BeatStrength.WEAK, BeatStrength.NEXT_STRONG, BeatStrength.WEAK],
    2: [BeatStrength.STRONG, BeatStrength.WEAK],
}


@dataclass(frozen=True)
class TimeSignature:
    beats_per_bar: int = 4

    def __post_init__(self):
        check_beats_per_bar(self.beats_per_bar)

    @property
    def sixteenths_per_bar(self):
        return 4 * self.beats_per_bar

    def __str__(self):
        return f"{self.beats_per_bar}/4"

    @classmethod
    def parse(cls, text):
        num, _, den = str(text).partition("/")
        if den not in ("4", ""):
            raise ValueError(f"unsupported time signature {text!r}")
        return cls(int(num))


@dataclass(frozen=True)
class Tonality:
    tonic: int
    mode: str  # "major" | "minor"

    def __post_init__(self):
        check_pitch_class(self.tonic)
        if self.mode not in ("major", "minor"):
            raise ValueError(f"mode must be 'major' or 'minor', got {self.mode!r}")

    def transposed(self, semitones):
        return Tonality((self.tonic + semitones) % 12, self.mode)

    def __str__(self):
        return f"{PITCH_NAMES[self.tonic]} {self.mode}"


@dataclass(frozen=True)
class ScaleDegree:
    degree: int  # 1..7
    inverted: bool = False

    def __post_init__(self):
        if not 1 <= self.degree <= 7:
            raise ValueError(f"degree {self.degree} outside 1..7")


def chord_degrees(tonality):
    """Pitch classes of the seven scale-degree roots for a tonality."""
    steps = MAJOR_STEPS if tonality.mode == "major" else MINOR_STEPS
    return [tonality.tonic] + [(tonality.tonic + s) % 12 for s in steps]


def beat_strength(beat_index_in_bar, ts):
    """Metrical strength of a beat position within the bar."""
    pattern = _STRENGTH_PATTERNS[ts.beats_per_bar]
    if not 0 <= beat_index_in_bar < ts.beats_per_bar:
        raise ValueError(f"beat index {beat_index_in_bar} outside bar of {ts.beats_per_bar}")
    return pattern[beat_index_in_bar]


def circular_distance(a, b):
    """Shortest pitch-class interval between two pitch classes (0..6)."""
    d = abs(a % 12 - b % 12)
    return min(d, 12 - d)


@dataclass(frozen=True, order=True)
class Chord:
    """A concrete chord voicing plus its reference-table identity.

    ``pitches`` are MIDI pitches sorted low to high.  ``root`` is a pitch
    class; ``quality`` indexes the chord table, or UNKNOWN_QUALITY when the
    voicing does not match any table entry.
    """

    pitches: tuple
    root: int
    quality: int = UNKNOWN_QUALITY

    def __post_init__(self):
        if not self.pitches:
            raise ValueError("chord must contain at least one pitch")
        if len(self.pitches) > 7:
            raise ValueError("chord wider than 7 notes")
        if list(self.pitches) != sorted(self.pitches):
            raise ValueError("chord pitches must be sorted ascending")
        for p in self.pitches:
            check_pitch(p, allow_rest=False)
        check_pitch_class(self.root)

    @property
    def bass(self):
        return self.pitches[0]

    @property
    def inverted(self):
        return self.bass % 12 != self.root

    @property
    def pitch_classes(self):
        return frozenset(p % 12 for p in self.pitches)

    def transposed(self, semitones):
        return Chord(
            tuple(p + semitones for p in self.pitches),
            (self.root + semitones) % 12,
            self.quality,
        )

    def label(self, chordmap=None):
        """Stable text label; table members get root:quality names."""
        if self.quality != UNKNOWN_QUALITY and chordmap is not None:
            return f"{PITCH_NAMES[self.root]}:{chordmap.quality_names[self.quality]}"
        if self.quality != UNKNOWN_QUALITY:
            return f"{PITCH_NAMES[self.root]}:q{self.quality}"
        return "pcs:" + ".".join(str(pc) for pc in sorted(self.pitch_classes))


def classify_degree(chord, tonality):
    """Scale degree of a chord within a tonality, or None if chromatic."""
    degrees = chord_degrees(tonality)
    root_pc = chord.root % 12
    if root_pc not in degrees:
        return None
    return ScaleDegree(degrees.index(root_pc) + 1, inverted=chord.inverted)


def _match_size(cand_units, target_pcs):
    """Maximum bipartite matching between candidate units and targets where
    edges join pitch classes at circular distance exactly 1 (Kuhn's
    augmenting paths).  ``cand_units`` may repeat a pitch class: a class
    with weight >= 2 can serve both of its neighbours."""
    cands = sorted(cand_units)
    targets = sorted(target_pcs)
    if not cands or not targets:
        return 0
    adj = [
        [j for j, t in enumerate(targets) if circular_distance(c, t) == 1]
        for c in cands
    ]
    match_of_target = [-1] * len(targets)

    def try_assign(i, seen):
        for j in adj[i]:
            if not seen[j]:
                seen[j] = True
                if match_of_target[j] == -1 or try_assign(match_of_target[j], seen):
                    match_of_target[j] = i
                    return True
        return False

    size = 0
    for i in range(len(cands)):
        if try_assign(i, [False] * len(targets)):
            size += 1
    return size


def chord_edit_cost(candidate, target_pcs):
    """Minimum cost transforming a weighted pitch-class multiset into a
    target pitch-class set.

    Replacement costs the circular distance (times the note weight),
    insertion and deletion cost 1 (deletion times the weight).  Candidate
    may be an iterable of pitch classes (implicit weight from multiplicity)
    or a mapping pc -> weight.
    """
    if isinstance(candidate, dict):
        weights = {pc % 12: w for pc, w in candidate.items() if w > 0}
    else:
        weights = {}
        for pc in candidate:
            weights[pc % 12] = weights.get(pc % 12, 0) + 1
    if not weights:
        raise ValueError("candidate multiset must be non-empty")
    targets = frozenset(pc % 12 for pc in target_pcs)

    # Every candidate note starts deleted and every target inserted; exact
    # matches then cancel both sides, and pairing leftover notes with
    # leftover targets at distance 1 saves one insertion each (replacement
    # cost equals the avoided deletion).  Moves over larger distances never
    # beat delete+insert, so this is the exact optimum.
    cost = sum(weights.values()) + len(targets)
    for pc, w in weights.items():
        if pc in targets:
            cost -= w + 1
    residual_units = []
    for pc, w in weights.items():
        if pc not in targets:
            residual_units.extend([pc] * min(w, 2))
    residual_targets = targets - frozenset(weights)
    cost -= _match_size(residual_units, residual_targets)
    return cost


class ChordMap:
    """The reference table of 36 quality templates x 12 roots = 432 chords."""

    def __init__(self, qualities):
        qualities = list(qualities)
        if len(qualities) != 36:
            raise ValueError(f"chord table needs exactly 36 qualities, got {len(qualities)}")
        self.quality_names = [name for name, _ in qualities]
        self.templates = []
        seen = set()
        for name, offsets in qualities:
            template = frozenset(int(o) % 12 for o in offsets)
            if 0 not in template:
                raise ValueError(f"quality {name!r} template must contain offset 0")
            if template in seen:
                raise ValueError(f"duplicate template for quality {name!r}")
            seen.add(template)
            self.templates.append(template)
        self.entries = []
        self._entry_pcs = []
        for q, template in enumerate(self.templates):
            for root in range(12):
                pcs = frozenset((o + root) % 12 for o in template)
                self.entries.append(self._voice(root, q, template))
                self._entry_pcs.append(pcs)
        self._by_pcs = {}
        for chord, pcs in zip(self.entries, self._entry_pcs):
            self._by_pcs.setdefault(pcs, []).append(chord)
        self._nearest_cache = {}

    @staticmethod
    def _voice(root, quality, template, base=48):
        """Canonical root-position voicing in the octave above ``base``."""
        root_pitch = base + root
        return Chord(tuple(root_pitch + o for o in sorted(template)), root, quality)

    @staticmethod
    def _parse(raw):
        # configuration is a JSON mapping quality name -> offset list;
        # key order fixes the quality index used for tie-breaking
        if isinstance(raw, dict) and "qualities" in raw:
            return [(q["name"], q["offsets"]) for q in raw["qualities"]]
        return list(raw.items())

    @classmethod
    def default(cls):
        raw = json.loads(
            resources.files("chordflow.data").joinpath("chordmap.json").read_text()
        )
        return cls(cls._parse(raw))

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            raw = json.load(fh)
        return cls(cls._parse(raw))

    def __len__(self):
        return len(self.entries)

    def entry(self, quality, root):
        return self.entries[quality * 12 + root]

    def entry_pcs(self, quality, root):
        return self._entry_pcs[quality * 12 + root]

    def identify(self, pitches):
        """Exact-match lookup of a voicing; root-position reading preferred."""
        pitches = tuple(sorted(pitches))
        pcs = frozenset(p % 12 for p in pitches)
        matches = self._by_pcs.get(pcs, [])
        if not matches:
            return None
        bass_pc = pitches[0] % 12
        rooted = [m for m in matches if m.root == bass_pc]
        pick = min(rooted or matches, key=lambda c: (c.quality, c.root))
        return Chord(pitches, pick.root, pick.quality)

    def chord_from_pitches(self, pitches):
        """Chord with table identity when the voicing matches, else UNKNOWN."""
        pitches = tuple(sorted(pitches))
        found = self.identify(pitches)
        if found is not None:
            return found
        return Chord(pitches, pitches[0] % 12, UNKNOWN_QUALITY)

    def nearest(self, candidate):
        """Minimum-edit-cost table entry for a weighted pitch-class multiset.

        Ties break toward the lower quality index, then the lower root.
        Returns (chord, cost).
        """
        if isinstance(candidate, dict):
            weights = {pc % 12: w for pc, w in candidate.items() if w > 0}
        else:
            weights = {}
            for pc in candidate:
                weights[pc % 12] = weights.get(pc % 12, 0) + 1
        key = tuple(sorted(weights.items()))
        hit = self._nearest_cache.get(key)
        if hit is not None:
            return hit
        best = None
        best_cost = None
        for idx, pcs in enumerate(self._entry_pcs):
            cost = chord_edit_cost(weights, pcs)
            if best_cost is None or cost < best_cost:
                best, best_cost = self.entries[idx], cost
                if cost == 0:
                    break
        self._nearest_cache[key] = (best, best_cost)
        return best, best_cost


def nearest_chordmap_chord(candidate, chordmap):
    return chordmap.nearest(candidate)


@dataclass(frozen=True)
class Score:
    """Two-array sampled piece: melody per sixteenth, chords per beat."""

    melody: tuple
    chords: tuple
    tonality: Tonality
    time_signature: TimeSignature = TimeSignature(4)
    bpm: float = 80.0
    piece_id: str = ""

    def __post_init__(self):
        check_melody(self.melody)
        if not self.chords:
            raise ValueError("chord array must be non-empty")
        if len(self.melody) != 4 * len(self.chords):
            raise ValueError(
                f"melody length {len(self.melody)} != 4 x chords length {len(self.chords)}"
            )
        if len(self.melody) % self.time_signature.sixteenths_per_bar != 0:
            raise ValueError("score must contain complete bars")

    @property
    def n_beats(self):
        return len(self.chords)

    @property
    def n_bars(self):
        return self.n_beats // self.time_signature.beats_per_bar

    def melody_beat(self, beat):
        return self.melody[4 * beat : 4 * beat + 4]


def sample_score(note_events, chord_events, tonality, time_signature=TimeSignature(4),
                 bpm=80.0, piece_id="", chordmap=None):
    """Sample (pitch, onset, duration) note events and (chord, onset, duration)
    chord events onto the sixteenth/beat grids.  Onsets and durations are in
    beats; notes must sit on the sixteenth grid, chords on the beat grid and
    no chord may be shorter than one beat.
    """
    note_events = [
        (check_pitch(p, allow_rest=False), as_grid_fraction(on), as_grid_fraction(dur, what="duration"))
        for p, on, dur in note_events
    ]
    chord_events_q = []
    for chord, on, dur in chord_events:
        on = as_grid_fraction(on)
        dur = as_grid_fraction(dur, what="duration")
        if on % 1 != 0 or dur % 1 != 0:
            raise ValueError("chord events must be quantized to the beat grid")
        if dur < 1:
            raise ValueError("chords shorter than one beat are not allowed")
        if not isinstance(chord, Chord):
            if chordmap is not None:
                chord = chordmap.chord_from_pitches(chord)
            else:
                pitches = tuple(sorted(chord))
                chord = Chord(pitches, pitches[0] % 12)
        chord_events_q.append((chord, int(on), int(dur)))

    end_beats = Fraction(0)
    for _, on, dur in note_events:
        end_beats = max(end_beats, on + dur)
    for _, on, dur in chord_events_q:
        end_beats = max(end_beats, Fraction(on + dur))
    bar_beats = time_signature.beats_per_bar
    n_beats = max(bar_beats, int(-(-end_beats // bar_beats)) * bar_beats)

    melody = [REST] * (4 * n_beats)
    for pitch, on, dur in note_events:
        start = int(on / SIXTEENTH)
        stop = int((on + dur) / SIXTEENTH)
        for slot in range(start, min(stop, len(melody))):
            melody[slot] = pitch

    last_seen = None
    chords = [None] * n_beats
    for chord, on, dur in sorted(chord_events_q, key=lambda e: e[1]):
        for b in range(on, min(on + dur, n_beats)):
            chords[b] = chord
    for b in range(n_beats):
        if chords[b] is None:
            if last_seen is None:
                first = next((c for c in chords if c is not None), None)
                chords[b] = first if first is not None else _default_triad(tonality)
            else:
                chords[b] = last_seen
        last_seen = chords[b]

    return Score(tuple(melody), tuple(chords), tonality, time_signature, bpm, piece_id)


def _default_triad(tonality):
    third = 4 if tonality.mode == "major" else 3
    root_pitch = 48 + tonality.tonic
    return Chord((root_pitch, root_pitch + third, root_pitch + 7), tonality.tonic)


def tonic_triad(tonality, chordmap=None):
    """Root-position tonic triad of a tonality (table-identified if possible)."""
    chord = _default_triad(tonality)
    if chordmap is not None:
        return chordmap.chord_from_pitches(chord.pitches)
    return chord


def melody_to_events(melody):
    """Run-length decode a sampled melody back into (pitch, onset, duration)."""
    events = []
    melody = list(melody)
    i, n = 0, len(melody)
    while i < n:
        pitch = melody[i]
        j = i
        while j < n and melody[j] == pitch:
            j += 1
        if pitch != REST:
            events.append((pitch, i * SIXTEENTH, (j - i) * SIXTEENTH))
        i = j
    return events


def score_to_dict(score):
    return {
        "id": score.piece_id,
        "bpm": score.bpm,
        "time_signature": str(score.time_signature),
        "tonality": {"tonic": score.tonality.tonic, "mode": score.tonality.mode},
        "melody": [None if p == REST else p for p in score.melody],
        "chords": [list(c.pitches) for c in score.chords],
    }


def score_from_dict(obj, chordmap=None):
    melody = tuple(REST if p is None else int(p) for p in obj["melody"])
    if chordmap is not None:
        chords = tuple(chordmap.chord_from_pitches(p) for p in obj["chords"])
    else:
        chords = tuple(Chord(tuple(sorted(p)), sorted(p)[0] % 12) for p in obj["chords"])
    return Score(
        melody,
        chords,
        Tonality(obj["tonality"]["tonic"], obj["tonality"]["mode"]),
        TimeSignature.parse(obj.get("time_signature", "4/4")),
        float(obj.get("bpm", 80.0)),
        str(obj.get("id", "")),
    )


def save_scores_jsonl(scores, path):
    with open(path, "w") as fh:
        for score in scores:
            fh.write(json.dumps(score_to_dict(score)) + "\n")


def load_scores_jsonl(path, chordmap=None):
    scores = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                scores.append(score_from_dict(json.loads(line), chordmap))
    return scores
