"""Input validation helpers shared across the package."""
from __future__ import annotations

from fractions import Fraction

REST = -1

SIXTEENTH = Fraction(1, 4)


def check_pitch(value, *, allow_rest=True):
    """Validate a MIDI pitch value (or the REST sentinel) and return it."""
    if value == REST:
        if not allow_rest:
            raise ValueError("REST is not allowed here")
        return REST
    if not isinstance(value, (int,)) or isinstance(value, bool):
        raise TypeError(f"pitch must be an integer, got {value!r}")
    if not 0 <= value <= 127:
        raise ValueError(f"pitch {value} outside MIDI range 0..127")
    return value


def check_pitch_class(value):
    if not isinstance(value, int) or isinstance(value, bool):
        raise TypeError(f"pitch class must be an integer, got {value!r}")
    if not 0 <= value <= 11:
        raise ValueError(f"pitch class {value} outside 0..11")
    return value


def check_beats_per_bar(value):
    if value not in (2, 4):
        raise ValueError(f"beats_per_bar must be 2 or 4, got {value!r}")
    return value


def check_melody(melody):
    """Validate a per-sixteenth melody array (ints or REST)."""
    melody = list(melody)
    if not melody:
        raise ValueError("melody must be non-empty")
    for slot in melody:
        check_pitch(slot)
    return melody


def as_grid_fraction(value, grid=SIXTEENTH, what="onset"):
    """Coerce a beat position/duration to a Fraction on the sixteenth grid."""
    frac = Fraction(value).limit_denominator(10_000)
    if frac % grid != 0:
        raise ValueError(f"{what} {value} is not quantized to the sixteenth grid")
    return frac


def check_probability_vector(vec, tol=1e-9):
    total = float(sum(vec))
    if abs(total - 1.0) > tol:
        raise ValueError(f"distribution sums to {total}, expected 1")
    return vec
