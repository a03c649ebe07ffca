// Key gestures -> per-sixteenth melody_in values.
//
// Presses snap to the nearest grid step of the session clock; held keys
// sustain across steps; with nothing held a step is null. The melody is
// monophonic: when several keys are down the highest wins. A step becomes
// decidable once its snap window has closed (half a step after its onset),
// so replaying a recorded gesture list always yields identical messages.

import { stepPeriodMs } from "./protocol.js";

export interface KeyGesture {
  pitch: number;
  on: boolean;
  timestampMs: number;
}

export interface QuantizedStep {
  step: number;
  pitch: number | null;
}

interface SnappedGesture {
  pitch: number;
  on: boolean;
  step: number;
  timestampMs: number;
}

export class KeyQuantizer {
  private readonly periodMs: number;
  private readonly t0Ms: number;
  private pending: SnappedGesture[] = [];
  private held = new Set<number>();
  private nextStep = 0;

  constructor(bpm: number, sessionStartMs: number) {
    this.periodMs = stepPeriodMs(bpm);
    this.t0Ms = sessionStartMs;
  }

  /** Snap a timestamp to its nearest grid step (never negative). */
  snapStep(timestampMs: number): number {
    return Math.max(0, Math.round((timestampMs - this.t0Ms) / this.periodMs));
  }

  keyInput(pitch: number, on: boolean, timestampMs: number): void {
    if (!Number.isInteger(pitch) || pitch < 0 || pitch > 127) {
      throw new Error(`bad pitch ${pitch}`);
    }
    this.pending.push({ pitch, on, step: this.snapStep(timestampMs), timestampMs });
  }

  /**
   * Emit every step whose snap window has closed by `nowMs`.
   *
   * A release snapped to a step silences that step (a key held for one
   * beat yields exactly four messages), unless its press snapped to the
   * same step: such a tap defers the release one step so it still sounds
   * for one sixteenth instead of quantizing to nothing.
   */
  flush(nowMs: number): QuantizedStep[] {
    const lastDecidable = Math.floor((nowMs - this.t0Ms) / this.periodMs - 0.5);
    const out: QuantizedStep[] = [];
    while (this.nextStep <= lastDecidable) {
      const step = this.nextStep;
      const here = this.pending.filter((g) => g.step === step);
      const ons = here.filter((g) => g.on);
      for (const off of here.filter((g) => !g.on)) {
        const isTap = ons.some(
          (on) => on.pitch === off.pitch && on.timestampMs <= off.timestampMs,
        );
        if (isTap) {
          off.step = step + 1;
        } else {
          this.held.delete(off.pitch);
        }
      }
      for (const on of ons) {
        this.held.add(on.pitch);
      }
      const pitch = this.held.size ? Math.max(...this.held) : null;
      out.push({ step, pitch });
      this.pending = this.pending.filter((g) => g.step !== step);
      this.nextStep += 1;
    }
    return out;
  }

  /** Replay a recorded gesture list deterministically. */
  static replay(bpm: number, t0Ms: number, gestures: KeyGesture[], untilMs: number): QuantizedStep[] {
    const quantizer = new KeyQuantizer(bpm, t0Ms);
    for (const gesture of gestures) {
      quantizer.keyInput(gesture.pitch, gesture.on, gesture.timestampMs);
    }
    return quantizer.flush(untilMs);
  }
}
