import { describe, expect, it } from "vitest";

import { KeyQuantizer } from "../src/quantizer.js";
import { stepPeriodMs } from "../src/protocol.js";

const BPM = 80;
const PERIOD = stepPeriodMs(BPM); // 187.5 ms

describe("KeyQuantizer", () => {
  it("holding C4 for one beat yields four pitch-60 steps", () => {
    const q = new KeyQuantizer(BPM, 0);
    q.keyInput(60, true, 0);
    q.keyInput(60, false, 4 * PERIOD);
    const steps = q.flush(6 * PERIOD);
    expect(steps.slice(0, 4)).toEqual([
      { step: 0, pitch: 60 },
      { step: 1, pitch: 60 },
      { step: 2, pitch: 60 },
      { step: 3, pitch: 60 },
    ]);
    expect(steps[4]).toEqual({ step: 4, pitch: null });
  });

  it("no keys held yields null steps", () => {
    const q = new KeyQuantizer(BPM, 0);
    expect(q.flush(3 * PERIOD)).toEqual([
      { step: 0, pitch: null },
      { step: 1, pitch: null },
      { step: 2, pitch: null },
    ]);
  });

  it("overlapping keys: the highest held pitch wins", () => {
    const q = new KeyQuantizer(BPM, 0);
    q.keyInput(60, true, 0);
    q.keyInput(67, true, PERIOD); // higher key joins at step 1
    q.keyInput(67, false, 3 * PERIOD);
    q.keyInput(60, false, 4 * PERIOD);
    const steps = q.flush(5 * PERIOD);
    expect(steps.map((s) => s.pitch)).toEqual([60, 67, 67, 60, null]);
  });

  it("presses snap to the nearest grid step", () => {
    const q = new KeyQuantizer(BPM, 0);
    q.keyInput(64, true, 0.4 * PERIOD); // closer to step 0
    q.keyInput(64, false, 2.6 * PERIOD); // closer to step 3
    const steps = q.flush(4 * PERIOD);
    expect(steps.map((s) => s.pitch)).toEqual([64, 64, 64, null]);
  });

  it("a tap inside one step still sounds for that step", () => {
    const q = new KeyQuantizer(BPM, 0);
    q.keyInput(72, true, 1.02 * PERIOD);
    q.keyInput(72, false, 1.3 * PERIOD); // both snap to step 1
    const steps = q.flush(3 * PERIOD);
    expect(steps.map((s) => s.pitch)).toEqual([null, 72, null]);
  });

  it("steps only become decidable after their snap window closes", () => {
    const q = new KeyQuantizer(BPM, 0);
    expect(q.flush(0.4 * PERIOD)).toEqual([]); // step 0 could still gain a press
    expect(q.flush(0.6 * PERIOD)).toEqual([{ step: 0, pitch: null }]);
  });

  it("replaying a recorded gesture list is deterministic", () => {
    const gestures = [
      { pitch: 60, on: true, timestampMs: 10 },
      { pitch: 64, on: true, timestampMs: 2.2 * PERIOD },
      { pitch: 60, on: false, timestampMs: 3.1 * PERIOD },
      { pitch: 64, on: false, timestampMs: 5.4 * PERIOD },
    ];
    const a = KeyQuantizer.replay(BPM, 0, gestures, 8 * PERIOD);
    const b = KeyQuantizer.replay(BPM, 0, gestures, 8 * PERIOD);
    expect(a).toEqual(b);
    expect(JSON.stringify(a)).toBe(JSON.stringify(b));
    // and incremental flushing agrees with one-shot replay
    const q = new KeyQuantizer(BPM, 0);
    const incremental: unknown[] = [];
    let fed = 0;
    for (let t = 0; t <= 8 * PERIOD; t += 33) {
      while (fed < gestures.length && gestures[fed].timestampMs <= t) {
        q.keyInput(gestures[fed].pitch, gestures[fed].on, gestures[fed].timestampMs);
        fed += 1;
      }
      incremental.push(...q.flush(t));
    }
    expect(incremental).toEqual(a);
  });

  it("rejects nonsense pitches", () => {
    const q = new KeyQuantizer(BPM, 0);
    expect(() => q.keyInput(200, true, 0)).toThrow();
  });
});
