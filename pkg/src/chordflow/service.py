"""Streaming service surfaces: newline-delimited JSON over stdin/stdout and
a WebSocket endpoint at /stream.  Each connection owns an independent
session; a malformed message earns an error reply, not a disconnect.
"""
from __future__ import annotations

import asyncio
import json

from .arranger import ChordArranger, RuleBasedArranger
from .core import ChordMap, TimeSignature, Tonality, tonic_triad
from .crf import ChordPredictor
from .stream import HoldLastPredictor, SimulatedClock, StreamSession
from .texture import TextureEngine, load_pattern_library


class SessionFactory:
    """Builds a StreamSession per start message, from optional checkpoints."""

    def __init__(self, arranger_path=None, predictor_path=None, patterns_path=None,
                 chordmap=None):
        self.chordmap = chordmap or ChordMap.default()
        self.arranger = (
            ChordArranger.load(arranger_path)
            if arranger_path
            else RuleBasedArranger(self.chordmap)
        )
        self.predictor_path = predictor_path
        self.patterns = load_pattern_library(patterns_path) if patterns_path else None

    def make(self, bpm, tonality, beats_per_bar=4):
        ts = TimeSignature(beats_per_bar)
        if self.predictor_path:
            predictor = ChordPredictor.from_checkpoint(self.predictor_path)
        else:
            default = tonic_triad(tonality, self.chordmap).label(self.chordmap)
            predictor = HoldLastPredictor(default)
        texture = TextureEngine(self.patterns, beats_per_bar=beats_per_bar)
        return StreamSession(
            self.arranger,
            predictor,
            self.chordmap,
            tonality,
            ts,
            SimulatedClock(bpm),
            texture,
        )


class ProtocolSession:
    """Wire-protocol state machine for one client connection."""

    FORWARDED_KINDS = ("melody_in", "chord_cached", "chord_predicted",
                       "accomp_out", "latency_report")

    def __init__(self, factory):
        self.factory = factory
        self.session = None
        self.done = False

    def handle_line(self, line):
        """Process one client message; returns JSON reply strings."""
        line = line.strip()
        if not line:
            return []
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            return [json.dumps({"type": "error", "message": f"bad json: {exc.msg}"})]
        if not isinstance(message, dict) or "type" not in message:
            return [json.dumps({"type": "error", "message": "missing message type"})]
        kind = message["type"]
        try:
            if kind == "start":
                return self._handle_start(message)
            if kind == "melody_in":
                return self._handle_melody(message)
            if kind == "end":
                return self._handle_end()
        except (ValueError, KeyError, TypeError, RuntimeError) as exc:
            return [json.dumps({"type": "error", "message": str(exc)})]
        return [json.dumps({"type": "error", "message": f"unknown type {kind!r}"})]

    def _events_to_messages(self, events):
        out = []
        for event in events:
            if event.kind not in self.FORWARDED_KINDS:
                continue
            body = {"type": event.kind, "beat": event.beat,
                    "timestamp_us": event.timestamp_us}
            body.update(event.payload)
            out.append(json.dumps(body, sort_keys=True))
        return out

    def _handle_start(self, message):
        if self.session is not None:
            return [json.dumps({"type": "error", "message": "session already started"})]
        bpm = float(message.get("bpm", 80.0))
        tonality_obj = message.get("tonality", {}) or {}
        tonality = Tonality(
            int(tonality_obj.get("tonic", 0)), tonality_obj.get("mode", "major")
        )
        beats_per_bar = int(message.get("beats_per_bar", 4))
        self.session = self.factory.make(bpm, tonality, beats_per_bar)
        events = self.session.start()
        return [json.dumps({"type": "started", "bpm": bpm})] + self._events_to_messages(events)

    def _handle_melody(self, message):
        if self.session is None:
            return [json.dumps({"type": "error", "message": "send start first"})]
        step = int(message["step"])
        pitch = message.get("pitch")
        events = self.session.feed(step, pitch)
        return self._events_to_messages(events)

    def _handle_end(self):
        if self.session is None:
            return [json.dumps({"type": "error", "message": "send start first"})]
        events = self.session.end()
        self.done = True
        return self._events_to_messages(events)


def run_stdio(factory, stdin, stdout):
    """One NDJSON session over a pair of text streams."""
    protocol = ProtocolSession(factory)
    for line in stdin:
        for reply in protocol.handle_line(line):
            stdout.write(reply + "\n")
        stdout.flush()
        if protocol.done:
            break


async def serve_websocket(factory, host="127.0.0.1", port=8765, ready=None):
    """Serve the wire protocol on ws://host:port/stream until cancelled."""
    from websockets.asyncio.server import serve

    async def handler(connection):
        if connection.request.path.rstrip("/") not in ("", "/stream"):
            await connection.close(code=1008, reason="unknown endpoint")
            return
        protocol = ProtocolSession(factory)
        async for raw in connection:
            for reply in protocol.handle_line(raw):
                await connection.send(reply)

    async with serve(handler, host, port) as server:
        if ready is not None:
            ready.set()
        await asyncio.Future()


def serve_forever(factory, host="127.0.0.1", port=8765):
    asyncio.run(serve_websocket(factory, host, port))
