"""Standard MIDI file reader/writer (format 1), no external dependencies.

Only the subset needed here is implemented: note on/off, program change,
tempo, time signature and track name meta events, 480 ticks per quarter.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

TICKS_PER_QUARTER = 480

PROGRAMS = {"Piano": 0, "Guitar": 24, "Cello": 42}


@dataclass
class MidiNote:
    pitch: int
    onset_ticks: int
    duration_ticks: int
    velocity: int = 80


@dataclass
class MidiTrack:
    name: str = ""
    program: int = 0
    notes: list = field(default_factory=list)


@dataclass
class MidiData:
    bpm: float = 120.0
    numerator: int = 4
    denominator: int = 4
    tracks: list = field(default_factory=list)
    ticks_per_quarter: int = TICKS_PER_QUARTER


def _vlq(value):
    """Encode a variable-length quantity."""
    if value < 0:
        raise ValueError("negative delta time")
    out = bytearray([value & 0x7F])
    value >>= 7
    while value:
        out.insert(0, 0x80 | (value & 0x7F))
        value >>= 7
    return bytes(out)


def _read_vlq(data, pos):
    value = 0
    while True:
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos


def _chunk(tag, payload):
    return tag + struct.pack(">I", len(payload)) + payload


def _meta(delta, meta_type, payload):
    return _vlq(delta) + bytes([0xFF, meta_type]) + _vlq(len(payload)) + payload


def _tempo_track(data):
    events = bytearray()
    mpqn = round(60_000_000 / data.bpm)
    events += _meta(0, 0x51, struct.pack(">I", mpqn)[1:])
    denom_pow = {1: 0, 2: 1, 4: 2, 8: 3, 16: 4}[data.denominator]
    events += _meta(0, 0x58, bytes([data.numerator, denom_pow, 24, 8]))
    events += _meta(0, 0x2F, b"")
    return _chunk(b"MTrk", bytes(events))


def _note_track(track, channel):
    # interleave on/off events in time order; offs before ons at equal ticks
    moments = []
    for note in track.notes:
        moments.append((note.onset_ticks, 1, 0x90, note.pitch, max(1, min(127, note.velocity))))
        moments.append((note.onset_ticks + note.duration_ticks, 0, 0x80, note.pitch, 0))
    moments.sort(key=lambda m: (m[0], m[1]))
    events = bytearray()
    if track.name:
        events += _meta(0, 0x03, track.name.encode())
    events += _vlq(0) + bytes([0xC0 | channel, track.program & 0x7F])
    clock = 0
    for tick, _, status, pitch, vel in moments:
        events += _vlq(tick - clock) + bytes([status | channel, pitch & 0x7F, vel & 0x7F])
        clock = tick
    events += _meta(0, 0x2F, b"")
    return _chunk(b"MTrk", bytes(events))


def write_midi(data, path):
    """Write MidiData as a format-1 SMF."""
    chunks = [_tempo_track(data)]
    for i, track in enumerate(data.tracks):
        channel = i % 16
        if channel == 9:  # skip the percussion channel
            channel = 10 if i + 1 < 16 else 15
        chunks.append(_note_track(track, channel))
    header = _chunk(
        b"MThd", struct.pack(">HHH", 1, len(chunks), data.ticks_per_quarter)
    )
    blob = header + b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(blob)
    return blob


def read_midi(path):
    """Parse an SMF written by this module (plus common wild variants)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != b"MThd":
        raise ValueError("not a MIDI file")
    header_len = struct.unpack(">I", blob[4:8])[0]
    fmt, n_tracks, division = struct.unpack(">HHH", blob[8:14])
    if division & 0x8000:
        raise ValueError("SMPTE time division not supported")
    data = MidiData(ticks_per_quarter=division, tracks=[])
    pos = 8 + header_len
    for _ in range(n_tracks):
        if blob[pos : pos + 4] != b"MTrk":
            raise ValueError("bad track chunk")
        length = struct.unpack(">I", blob[pos + 4 : pos + 8])[0]
        track_data = blob[pos + 8 : pos + 8 + length]
        pos += 8 + length
        track = _parse_track(track_data, data)
        if track.notes or track.name:
            data.tracks.append(track)
    return data


def _parse_track(raw, data):
    track = MidiTrack()
    tick = 0
    i = 0
    running = None
    open_notes = {}
    while i < len(raw):
        delta, i = _read_vlq(raw, i)
        tick += delta
        status = raw[i]
        if status & 0x80:
            i += 1
            if status < 0xF0:
                running = status
        else:
            status = running
        if status == 0xFF:
            meta_type = raw[i]
            i += 1
            length, i = _read_vlq(raw, i)
            payload = raw[i : i + length]
            i += length
            if meta_type == 0x51:
                mpqn = int.from_bytes(payload, "big")
                data.bpm = 60_000_000 / mpqn
            elif meta_type == 0x58 and len(payload) >= 2:
                data.numerator = payload[0]
                data.denominator = 2 ** payload[1]
            elif meta_type == 0x03:
                track.name = payload.decode(errors="replace")
        elif status in (0xF0, 0xF7):
            length, i = _read_vlq(raw, i)
            i += length
        else:
            kind = status & 0xF0
            if kind in (0x80, 0x90, 0xA0, 0xB0, 0xE0):
                a, b = raw[i], raw[i + 1]
                i += 2
                if kind == 0x90 and b > 0:
                    open_notes.setdefault(a, []).append((tick, b))
                elif kind == 0x80 or (kind == 0x90 and b == 0):
                    if open_notes.get(a):
                        onset, vel = open_notes[a].pop(0)
                        track.notes.append(MidiNote(a, onset, tick - onset, vel))
            elif kind in (0xC0, 0xD0):
                value = raw[i]
                i += 1
                if kind == 0xC0:
                    track.program = value
    track.notes.sort(key=lambda n: (n.onset_ticks, n.pitch))
    return track
