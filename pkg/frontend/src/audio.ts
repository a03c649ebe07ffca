// Playback scheduling of accomp_out tracks on an audio clock.
//
// The sink abstraction keeps the scheduler testable in node: the browser
// main wires a WebAudio sink, tests use a recording fake.

import type { AccompOutMessage, TrackEventWire } from "./protocol.js";
import { beatPeriodMs } from "./protocol.js";

export interface AudioSink {
  /** Current audio-clock time in milliseconds. */
  nowMs(): number;
  scheduleNote(
    instrument: string,
    pitch: number,
    startMs: number,
    durationMs: number,
    velocity: number,
  ): void;
}

export interface ScheduleResult {
  scheduled: number;
  skippedLate: boolean;
  marginMs: number; // how far ahead of its beat the message landed
}

export class PlaybackScheduler {
  private underruns = 0;
  private margins: number[] = [];

  constructor(
    private readonly sink: AudioSink,
    private readonly bpm: number,
    private readonly sessionStartMs: number,
  ) {}

  /** Audio-clock time of a beat onset. */
  beatOnsetMs(beat: number): number {
    return this.sessionStartMs + beat * beatPeriodMs(this.bpm);
  }

  /**
   * Schedule one accomp_out message. A message arriving after its beat
   * onset is skipped entirely and counted as an underrun: live audio must
   * not smear late material over the next beat.
   */
  schedule(message: AccompOutMessage): ScheduleResult {
    const now = this.sink.nowMs();
    const onset = this.beatOnsetMs(message.beat);
    const margin = onset - now;
    this.margins.push(margin);
    if (now > onset) {
      this.underruns += 1;
      return { scheduled: 0, skippedLate: true, marginMs: margin };
    }
    let scheduled = 0;
    for (const track of message.tracks) {
      scheduled += this.scheduleTrack(track);
    }
    return { scheduled, skippedLate: false, marginMs: margin };
  }

  private scheduleTrack(track: TrackEventWire): number {
    const start = this.sessionStartMs + track.onset * beatPeriodMs(this.bpm);
    const duration = track.dur * beatPeriodMs(this.bpm);
    this.sink.scheduleNote(track.instr, track.pitch, start, duration, track.vel);
    return 1;
  }

  underrunCount(): number {
    return this.underruns;
  }

  /** Mean emit-ahead margin in beats, the console's latency meter value. */
  meanMarginBeats(): number {
    if (!this.margins.length) {
      return 0;
    }
    const mean = this.margins.reduce((a, b) => a + b, 0) / this.margins.length;
    return mean / beatPeriodMs(this.bpm);
  }

  lastMarginMs(): number {
    return this.margins.length ? this.margins[this.margins.length - 1] : 0;
  }
}

export class RecordingSink implements AudioSink {
  now = 0;
  readonly notes: Array<{
    instrument: string;
    pitch: number;
    startMs: number;
    durationMs: number;
    velocity: number;
  }> = [];

  nowMs(): number {
    return this.now;
  }

  scheduleNote(
    instrument: string,
    pitch: number,
    startMs: number,
    durationMs: number,
    velocity: number,
  ): void {
    this.notes.push({ instrument, pitch, startMs, durationMs, velocity });
  }
}

const WAVEFORMS: Record<string, OscillatorType> = {
  Piano: "triangle",
  Guitar: "sawtooth",
  Cello: "sine",
};

/** WebAudio sink: one oscillator per note with a short gain envelope. */
export class WebAudioSink implements AudioSink {
  constructor(private readonly context: AudioContext) {}

  nowMs(): number {
    return this.context.currentTime * 1000;
  }

  scheduleNote(
    instrument: string,
    pitch: number,
    startMs: number,
    durationMs: number,
    velocity: number,
  ): void {
    const start = startMs / 1000;
    const stop = (startMs + durationMs) / 1000;
    const oscillator = this.context.createOscillator();
    oscillator.type = WAVEFORMS[instrument] ?? "triangle";
    oscillator.frequency.value = 440 * Math.pow(2, (pitch - 69) / 12);
    const gain = this.context.createGain();
    const level = 0.25 * (velocity / 127);
    gain.gain.setValueAtTime(0, start);
    gain.gain.linearRampToValueAtTime(level, start + 0.01);
    gain.gain.setTargetAtTime(0, Math.max(start + 0.01, stop - 0.05), 0.03);
    oscillator.connect(gain).connect(this.context.destination);
    oscillator.start(start);
    oscillator.stop(stop + 0.1);
  }
}
