import { describe, expect, it } from "vitest";

import { PlaybackScheduler, RecordingSink } from "../src/audio.js";
import type { AccompOutMessage } from "../src/protocol.js";
import { SessionView } from "../src/view.js";

const BPM = 80;
const BEAT_MS = 60000 / BPM;

function accomp(beat: number, tracks = 2): AccompOutMessage {
  return {
    type: "accomp_out",
    beat,
    chord: [48, 52, 55],
    tracks: Array.from({ length: tracks }, (_, i) => ({
      instr: i === 0 ? "Piano" : "Cello",
      pitch: 48 + 4 * i,
      onset: beat + i * 0.5,
      dur: 1,
      vel: 80,
    })),
    emit_ts_us: 0,
  };
}

describe("PlaybackScheduler", () => {
  it("schedules ahead-of-beat messages at their musical onsets", () => {
    const sink = new RecordingSink();
    const scheduler = new PlaybackScheduler(sink, BPM, 1000);
    sink.now = 1000; // session start; beat 1 begins at 1000 + 750
    const result = scheduler.schedule(accomp(1));
    expect(result.skippedLate).toBe(false);
    expect(result.scheduled).toBe(2);
    expect(sink.notes[0].startMs).toBeCloseTo(1000 + BEAT_MS, 6);
    expect(sink.notes[1].startMs).toBeCloseTo(1000 + 1.5 * BEAT_MS, 6);
    expect(sink.notes[0].durationMs).toBeCloseTo(BEAT_MS, 6);
  });

  it("skips late messages and counts the underrun", () => {
    const sink = new RecordingSink();
    const scheduler = new PlaybackScheduler(sink, BPM, 0);
    sink.now = 2 * BEAT_MS + 1; // beat 2 already passed
    const result = scheduler.schedule(accomp(2));
    expect(result.skippedLate).toBe(true);
    expect(sink.notes).toHaveLength(0);
    expect(scheduler.underrunCount()).toBe(1);
  });

  it("latency meter reflects the measured margin", () => {
    const sink = new RecordingSink();
    const scheduler = new PlaybackScheduler(sink, BPM, 0);
    sink.now = 0;
    scheduler.schedule(accomp(1)); // margin one beat
    expect(scheduler.lastMarginMs()).toBeCloseTo(BEAT_MS, 6);
    expect(scheduler.meanMarginBeats()).toBeCloseTo(1.0, 6);
  });
});

describe("SessionView", () => {
  it("tracks cached and predicted chords per beat", () => {
    const view = new SessionView();
    view.apply({ type: "chord_cached", beat: 0, chord_label: "C:maj" });
    view.apply({ type: "chord_predicted", beat: 1, chord_label: "F:maj" });
    const rows = view.recent();
    expect(rows.find((r) => r.beat === 0)?.cachedChord).toBe("C:maj");
    expect(rows.find((r) => r.beat === 1)?.predictedChord).toBe("F:maj");
  });

  it("prediction is visible before its beat is scheduled", () => {
    const view = new SessionView();
    view.apply({ type: "chord_predicted", beat: 3, chord_label: "G:maj" });
    view.markScheduled(3, false, 0.9);
    expect(view.rows.get(3)?.predictionWasVisible).toBe(true);
    expect(view.rows.get(3)?.playedAt).toBe("scheduled");
  });

  it("skipped beats surface as underruns", () => {
    const view = new SessionView();
    view.apply({ type: "chord_predicted", beat: 2, chord_label: "G:maj" });
    view.markScheduled(2, true, -0.2);
    expect(view.rows.get(2)?.underrun).toBe(true);
    expect(view.latency.underruns).toBe(1);
  });

  it("never mutates on unknown messages", () => {
    const view = new SessionView();
    view.apply({ type: "mystery", anything: 1 });
    expect(view.rows.size).toBe(0);
    expect(view.banner).toBeNull();
  });

  it("latency report updates the meter", () => {
    const view = new SessionView();
    view.apply({
      type: "latency_report",
      beats: 16,
      logical_latency_beats_max: -0.9,
      emit_margin_beats_mean: 0.95,
      underruns: 0,
    });
    expect(view.latency.marginBeats).toBeCloseTo(0.95);
    expect(view.latency.beatsSeen).toBe(16);
  });
});
