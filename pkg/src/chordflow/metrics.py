"""Objective evaluation metrics for melody/accompaniment pairs.

Each metric is a pure function of the sampled score (melody per sixteenth,
chords per beat).  Quality is judged by closeness to a reference corpus, so
the CLI reports signed differences from reference values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .core import REST, chord_degrees, chord_edit_cost
from .features import terminal_chord_flags, weighted_factors, weighted_note_flags

# Three interleaved circles of the 6-D tonal centroid transform:
# fifths (r=1), minor thirds (r=1), major thirds (r=0.5).
_CENTROID = np.zeros((12, 6))
for _pc in range(12):
    _CENTROID[_pc, 0] = math.sin(_pc * 7 * math.pi / 6)
    _CENTROID[_pc, 1] = math.cos(_pc * 7 * math.pi / 6)
    _CENTROID[_pc, 2] = math.sin(_pc * 3 * math.pi / 2)
    _CENTROID[_pc, 3] = math.cos(_pc * 3 * math.pi / 2)
    _CENTROID[_pc, 4] = 0.5 * math.sin(_pc * 2 * math.pi / 3)
    _CENTROID[_pc, 5] = 0.5 * math.cos(_pc * 2 * math.pi / 3)

# melody-to-chord-tone interval scoring (semitones mod 12)
_CONSONANT = {0, 3, 4, 7, 8, 9}
_NEUTRAL = {5}


def tonal_centroid(profile):
    """6-D centroid of a pitch-class profile (unit-mass normalized)."""
    profile = np.asarray(profile, dtype=float)
    total = profile.sum()
    if total <= 0:
        return np.zeros(6)
    return (profile / total) @ _CENTROID


def _pc_profile(pcs):
    profile = np.zeros(12)
    for pc in pcs:
        profile[pc % 12] += 1.0
    return profile


def _chord_runs(chords):
    """Run-length encode the per-beat chord sequence into change events."""
    runs = []
    i = 0
    while i < len(chords):
        j = i
        while j < len(chords) and chords[j].pitches == chords[i].pitches:
            j += 1
        runs.append((chords[i], i, j - i))
        i = j
    return runs


def cpi(chords):
    """Mean absolute difference between mean pitches of consecutive distinct
    chords (semitones); 0 when fewer than two chord events."""
    runs = _chord_runs(chords)
    if len(runs) < 2:
        return 0.0
    diffs = []
    for (a, _, _), (b, _, _) in zip(runs, runs[1:]):
        mean_a = sum(a.pitches) / len(a.pitches)
        mean_b = sum(b.pitches) / len(b.pitches)
        diffs.append(abs(mean_b - mean_a))
    return float(sum(diffs) / len(diffs))


def cioi(chords):
    """Mean onset difference in beats between consecutive distinct chords;
    0 when the chord never changes."""
    runs = _chord_runs(chords)
    if len(runs) < 2:
        return 0.0
    gaps = [b_on - a_on for (_, a_on, _), (_, b_on, _) in zip(runs, runs[1:])]
    return float(sum(gaps) / len(gaps))


def ctnctr(melody, chords):
    """Fraction of sounding melody sixteenths whose pitch class is a tone of
    the concurrent chord."""
    total = 0
    hits = 0
    for slot, pitch in enumerate(melody):
        if pitch == REST:
            continue
        chord = chords[min(slot // 4, len(chords) - 1)]
        total += 1
        if pitch % 12 in chord.pitch_classes:
            hits += 1
    return hits / total if total else 0.0


def pcs(melody, chords):
    """Mean interval consonance between melody samples and chord tones:
    unison/thirds/fifths/sixths +1, perfect fourth 0, the rest -1."""
    score = 0.0
    pairs = 0
    for slot, pitch in enumerate(melody):
        if pitch == REST:
            continue
        chord = chords[min(slot // 4, len(chords) - 1)]
        for tone in chord.pitch_classes:
            interval = (pitch - tone) % 12
            if interval in _CONSONANT:
                score += 1.0
            elif interval not in _NEUTRAL:
                score -= 1.0
            pairs += 1
    return score / pairs if pairs else 0.0


def mctd(melody, chords):
    """Mean 6-D tonal-centroid distance between each sounding melody sample
    and its concurrent chord's pitch-class profile."""
    dists = []
    for slot, pitch in enumerate(melody):
        if pitch == REST:
            continue
        chord = chords[min(slot // 4, len(chords) - 1)]
        vec_m = tonal_centroid(_pc_profile([pitch]))
        vec_c = tonal_centroid(_pc_profile(chord.pitch_classes))
        dists.append(float(np.linalg.norm(vec_m - vec_c)))
    return float(sum(dists) / len(dists)) if dists else 0.0


def che(chords):
    """Shannon entropy (natural log) of the per-beat chord-label histogram."""
    counts = {}
    for chord in chords:
        counts[chord.pitches] = counts.get(chord.pitches, 0) + 1
    total = sum(counts.values())
    entropy = 0.0
    for c in counts.values():
        p = c / total
        entropy -= p * math.log(p)
    return entropy


def _degree_triad_pcs(tonality):
    """Pitch-class sets of the non-inverted I, II, IV, V triads."""
    degrees = chord_degrees(tonality)
    out = []
    for i in (0, 1, 3, 4):
        out.append(frozenset({degrees[i], degrees[(i + 2) % 7], degrees[(i + 4) % 7]}))
    return out


def cs(chords, tonality):
    """Mean minimum edit cost from each chord to the structural I/II/IV/V
    triads of the tonality (lower = more stable)."""
    stable = _degree_triad_pcs(tonality)
    costs = []
    for chord in chords:
        costs.append(min(chord_edit_cost(sorted(chord.pitch_classes), t) for t in stable))
    return float(sum(costs) / len(costs)) if costs else 0.0


def hs(chords, tonality):
    """Harmonic cadence density: flagged terminal beats over all beats."""
    flags = terminal_chord_flags(chords, tonality)
    return sum(flags) / len(flags) if flags else 0.0


def wmch(melody, chords, tonality, chordmap, factors=None, ts=None):
    """Mean edit cost between each chord and the weighted factor extracted
    from the preceding beat's melody."""
    from .core import TimeSignature

    ts = ts or TimeSignature(4)
    if factors is None:
        flags = weighted_note_flags(melody, ts)
        factors = weighted_factors(melody, flags, ts, tonality, chordmap)
    costs = []
    for b in range(1, len(chords)):
        factor = factors[b - 1]
        costs.append(
            chord_edit_cost(sorted(chords[b].pitch_classes), factor.pitch_classes)
        )
    return float(sum(costs) / len(costs)) if costs else 0.0


@dataclass
class MetricReport:
    cpi: float
    cioi: float
    ctnctr: float
    pcs: float
    mctd: float
    che: float
    cs: float
    hs: float
    wmch: float

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @staticmethod
    def names():
        return [f.name for f in fields(MetricReport)]


def metric_report(score, chordmap, factors=None):
    """All nine metrics for one score."""
    return MetricReport(
        cpi=cpi(score.chords),
        cioi=cioi(score.chords),
        ctnctr=ctnctr(score.melody, score.chords),
        pcs=pcs(score.melody, score.chords),
        mctd=mctd(score.melody, score.chords),
        che=che(score.chords),
        cs=cs(score.chords, score.tonality),
        hs=hs(score.chords, score.tonality),
        wmch=wmch(
            score.melody, score.chords, score.tonality, chordmap,
            factors=factors, ts=score.time_signature,
        ),
    )


def metric_timeseries(score, chordmap, window_bars=4):
    """Sliding per-window metric reports for bias-over-time analysis.

    Factors are extracted once over the whole stream (they are causal), then
    each window is evaluated as its own slice.
    """
    from .core import Score

    bpb = score.time_signature.beats_per_bar
    flags = weighted_note_flags(score.melody, score.time_signature)
    factors = weighted_factors(
        score.melody, flags, score.time_signature, score.tonality, chordmap
    )
    reports = []
    beats_per_window = window_bars * bpb
    n_windows = -(-score.n_beats // beats_per_window)
    for w in range(n_windows):
        lo = w * beats_per_window
        hi = min(score.n_beats, lo + beats_per_window)
        window = Score(
            score.melody[4 * lo : 4 * hi],
            score.chords[lo:hi],
            score.tonality,
            score.time_signature,
            score.bpm,
            f"{score.piece_id}[{w}]",
        ) if (hi - lo) % bpb == 0 else None
        if window is None:
            break
        reports.append(metric_report(window, chordmap, factors=factors[lo:hi]))
    return reports


def mean_report(reports):
    """Field-wise mean of several metric reports."""
    if not reports:
        raise ValueError("no reports to average")
    values = {
        name: sum(getattr(r, name) for r in reports) / len(reports)
        for name in MetricReport.names()
    }
    return MetricReport(**values)


def difference_report(report, reference):
    """Signed difference from a reference report, metric by metric."""
    return {
        name: getattr(report, name) - getattr(reference, name)
        for name in MetricReport.names()
    }
