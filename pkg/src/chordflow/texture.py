"""Texture rendering: verse/chorus classification, phrase segmentation by
terminal chords, rotating multi-track patterns, and pattern-to-event
resolution against concrete chords.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from importlib import resources

from .core import REST
from .validation import as_grid_fraction

INSTRUMENTS = ("Piano", "Guitar", "Cello")

VERSE_ROTATION = (("VersePiano1", "VerseGuitar"), ("VersePiano2", "VerseGuitar"),
                  ("VersePiano3", "VerseGuitar"))
CHORUS_ROTATION = (("ChorusPiano1", "ChorusGuitar"), ("ChorusPiano2", "ChorusGuitar"))

DEFAULT_CHORUS_THRESHOLD = 0.4

CADENCE_WINDOW_BEATS = (4, 16)  # look this far back for a phrase boundary


def intensity_to_velocity(intensity):
    """p1..p9 mapped linearly onto MIDI velocity 15..127."""
    if not intensity.startswith("p"):
        raise ValueError(f"bad intensity {intensity!r}")
    level = int(intensity[1:])
    if not 1 <= level <= 9:
        raise ValueError(f"intensity level {level} outside p1..p9")
    return 15 + 14 * (level - 1)


@dataclass(frozen=True)
class PatternNote:
    chord_note_index: int      # i-th chord note, low to high, 1-based
    start_beat: Fraction       # within the pattern
    duration_beats: Fraction
    instrument: str
    intensity: str

    def __post_init__(self):
        if self.chord_note_index < 1:
            raise ValueError("chord note index is 1-based")
        if self.start_beat < 0 or self.duration_beats <= 0:
            raise ValueError("bad pattern note timing")
        if self.instrument not in INSTRUMENTS:
            raise ValueError(f"unknown instrument {self.instrument!r}")
        intensity_to_velocity(self.intensity)


@dataclass(frozen=True)
class TexturePattern:
    name: str
    notes: tuple
    length_bars: int

    def notes_in_bar(self, bar, beats_per_bar):
        lo = bar * beats_per_bar
        hi = lo + beats_per_bar
        return [n for n in self.notes if lo <= n.start_beat < hi]


@dataclass(frozen=True)
class TrackEvent:
    pitch: int
    onset_beats: Fraction
    duration_beats: Fraction
    instrument: str
    velocity: int


def parse_pattern_library(text):
    """Parse the pattern library text format into {name: TexturePattern}."""
    patterns = {}
    name = None
    bars = 4
    notes = []

    def flush():
        if name is not None:
            patterns[name] = TexturePattern(name, tuple(notes), bars)

    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            flush()
            header, _, rest = line.partition("]")
            name = header[1:].strip()
            bars = 1 if name == "Decorative" else 4
            for token in rest.split():
                key, _, value = token.partition("=")
                if key == "bars":
                    bars = int(value)
            notes = []
            continue
        idx, start, dur, instrument, intensity = [t.strip() for t in line.split(",")]
        notes.append(
            PatternNote(
                int(idx),
                as_grid_fraction(start, what="pattern start"),
                as_grid_fraction(dur, what="pattern duration"),
                instrument,
                intensity,
            )
        )
    flush()
    return patterns


def default_pattern_library():
    text = resources.files("chordflow.data").joinpath("patterns.txt").read_text()
    return parse_pattern_library(text)


def load_pattern_library(path):
    with open(path) as fh:
        return parse_pattern_library(fh.read())


def resolve_chord_note(chord, index):
    """Concrete pitch of the i-th chord note; indexes past the chord size
    wrap around with an octave lift."""
    if not chord.pitches:
        raise ValueError("cannot render an empty chord")
    n = len(chord.pitches)
    return chord.pitches[(index - 1) % n] + 12 * ((index - 1) // n)


def render(pattern, chord, bar_offset=0, beats_per_bar=4):
    """Resolve a whole pattern against one chord into track events.

    Onsets shift by ``bar_offset`` bars.  The lowest piano pitch of each
    pattern bar is doubled on cello with the same onset and duration.
    """
    shift = Fraction(bar_offset * beats_per_bar)
    events = []
    for note in pattern.notes:
        events.append(
            TrackEvent(
                resolve_chord_note(chord, note.chord_note_index),
                note.start_beat + shift,
                note.duration_beats,
                note.instrument,
                intensity_to_velocity(note.intensity),
            )
        )
    for bar in range(pattern.length_bars):
        bar_events = [
            e
            for e in events
            if e.instrument == "Piano"
            and Fraction(bar * beats_per_bar) + shift
            <= e.onset_beats
            < Fraction((bar + 1) * beats_per_bar) + shift
        ]
        if not bar_events:
            continue
        lowest = min(bar_events, key=lambda e: (e.pitch, e.onset_beats))
        events.append(replace(lowest, instrument="Cello"))
    events.sort(key=lambda e: (e.onset_beats, e.instrument, e.pitch))
    return events


def section_classify(samples, threshold=DEFAULT_CHORUS_THRESHOLD, window_bars=4,
                     beats_per_bar=4):
    """Verse/chorus decision from the pitch-change rate of the last 4 bars.

    Rate = changing adjacent non-rest sample pairs over all non-rest pairs;
    fewer than 4 complete bars classifies as verse (pieces open with one).
    """
    needed = 4 * window_bars * beats_per_bar
    if len(samples) < needed:
        return "verse"
    window = samples[-needed:]
    changes = 0
    pairs = 0
    for a, b in zip(window, window[1:]):
        if a == REST or b == REST:
            continue
        pairs += 1
        if a != b:
            changes += 1
    if pairs == 0:
        return "verse"
    return "chorus" if changes / pairs >= threshold else "verse"


@dataclass
class SectionState:
    section: str = "verse"          # verse | chorus
    rotation_index: int = 0
    bars_into_pattern: int = 0


class TextureEngine:
    """Stateful per-stream pattern scheduler.

    Regular patterns advance in the fixed verse/chorus rotation at their
    4-bar boundaries; a fresh cadence inside the lookback window inserts one
    decorative bar and suspends the rotation counter.  Rendering is per beat
    so each beat resolves against its own predicted chord.
    """

    def __init__(self, library=None, chorus_threshold=DEFAULT_CHORUS_THRESHOLD,
                 beats_per_bar=4):
        self.library = library or default_pattern_library()
        self.chorus_threshold = chorus_threshold
        self.beats_per_bar = beats_per_bar
        self.state = SectionState()
        self.active = None
        self.decorative_pending_resume = None
        self.last_cadence_handled = -1

    def _rotation(self):
        return VERSE_ROTATION if self.state.section == "verse" else CHORUS_ROTATION

    def select_pattern(self, cadence_in_window):
        """Choose the next pattern(s) at a pattern boundary."""
        self.state.bars_into_pattern = 0
        if cadence_in_window:
            # phrase switch: one decorative bar, rotation suspended
            self.decorative_pending_resume = self.state.rotation_index
            self.active = [self.library["Decorative"]]
            return self.active
        if self.decorative_pending_resume is not None:
            self.state.rotation_index = self.decorative_pending_resume
            self.decorative_pending_resume = None
        rotation = self._rotation()
        names = rotation[self.state.rotation_index % len(rotation)]
        self.state.rotation_index += 1
        self.active = [self.library[n] for n in names]
        return self.active

    def _fresh_cadence(self, terminal_flags):
        lo, hi = CADENCE_WINDOW_BEATS
        n = len(terminal_flags)
        for back in range(lo, min(hi, n) + 1):
            beat = n - back
            if beat >= 0 and terminal_flags[beat]:
                if beat > self.last_cadence_handled:
                    self.last_cadence_handled = beat
                    return True
                return False
        return False

    def step_bar(self, melody_so_far, terminal_flags):
        """Advance state at a bar boundary, before rendering the new bar."""
        if self.active is not None:
            pattern_bars = max(p.length_bars for p in self.active)
            if self.state.bars_into_pattern < pattern_bars:
                return  # mid-pattern: switching only happens at boundaries
        section = section_classify(
            melody_so_far, self.chorus_threshold, beats_per_bar=self.beats_per_bar
        )
        if section != self.state.section:
            self.state.section = section
            self.state.rotation_index = 0
            self.decorative_pending_resume = None
        self.select_pattern(self._fresh_cadence(terminal_flags))

    def render_beat(self, chord, beat_index):
        """Track events for one beat resolved against its predicted chord."""
        bpb = self.beats_per_bar
        if self.active is None:
            self.select_pattern(False)
        bar_in_pattern = self.state.bars_into_pattern
        beat_in_bar = beat_index % bpb
        lo = Fraction(bar_in_pattern * bpb + beat_in_bar)
        hi = lo + 1
        events = []
        for pattern in self.active:
            for note in pattern.notes:
                if lo <= note.start_beat < hi:
                    events.append(
                        TrackEvent(
                            resolve_chord_note(chord, note.chord_note_index),
                            Fraction(beat_index) + (note.start_beat - lo),
                            note.duration_beats,
                            note.instrument,
                            intensity_to_velocity(note.intensity),
                        )
                    )
        if beat_in_bar == 0:
            piano = [e for e in events if e.instrument == "Piano"]
            if piano:
                lowest = min(piano, key=lambda e: (e.pitch, e.onset_beats))
                events.append(replace(lowest, instrument="Cello"))
        if beat_in_bar == bpb - 1:
            self.state.bars_into_pattern += 1
        events.sort(key=lambda e: (e.onset_beats, e.instrument, e.pitch))
        return events
