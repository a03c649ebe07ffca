// Session view model: a rolling beat grid of what the engine reported.
//
// Pure state (testable headless); the DOM projection lives in main.ts.
// Cached chords and played accompaniment get distinct colors in the UI
// (cached = blue context, played = red output).

import type { ServerMessage } from "./protocol.js";

export interface BeatRow {
  beat: number;
  melody: Array<number | null>;
  cachedChord: string | null;
  predictedChord: string | null;
  underrun: boolean;
  playedAt: "pending" | "scheduled" | "skipped";
  predictionWasVisible: boolean; // chord shown before its beat played
}

export interface LatencyView {
  marginBeats: number;
  underruns: number;
  beatsSeen: number;
}

export class SessionView {
  readonly rows = new Map<number, BeatRow>();
  latency: LatencyView = { marginBeats: 0, underruns: 0, beatsSeen: 0 };
  connection = "connecting";
  banner: string | null = null;

  private row(beat: number): BeatRow {
    let row = this.rows.get(beat);
    if (!row) {
      row = {
        beat,
        melody: [null, null, null, null],
        cachedChord: null,
        predictedChord: null,
        underrun: false,
        playedAt: "pending",
        predictionWasVisible: false,
      };
      this.rows.set(beat, row);
    }
    return row;
  }

  noteMelody(step: number, pitch: number | null): void {
    const row = this.row(Math.floor(step / 4));
    row.melody[step % 4] = pitch;
  }

  apply(message: ServerMessage): void {
    switch (message.type) {
      case "chord_cached": {
        const body = message as { beat: number; chord_label: string };
        this.row(body.beat).cachedChord = body.chord_label;
        break;
      }
      case "chord_predicted": {
        const body = message as { beat: number; chord_label: string; underrun?: boolean };
        const row = this.row(body.beat);
        row.predictedChord = body.chord_label;
        row.underrun = Boolean(body.underrun);
        break;
      }
      case "melody_in": {
        const body = message as unknown as { step: number; pitch: number | null };
        this.noteMelody(body.step, body.pitch);
        break;
      }
      case "latency_report": {
        const body = message as {
          beats: number;
          emit_margin_beats_mean: number;
          underruns: number;
        };
        this.latency = {
          marginBeats: body.emit_margin_beats_mean,
          underruns: body.underruns,
          beatsSeen: body.beats,
        };
        break;
      }
      case "error": {
        this.banner = String((message as { message?: string }).message ?? "error");
        break;
      }
      default:
        break;
    }
  }

  markScheduled(beat: number, skipped: boolean, marginBeats: number): void {
    const row = this.row(beat);
    row.playedAt = skipped ? "skipped" : "scheduled";
    row.predictionWasVisible = row.predictedChord !== null;
    if (skipped) {
      row.underrun = true;
      this.latency.underruns += 1;
    }
    this.latency.marginBeats = marginBeats;
    this.latency.beatsSeen += 1;
  }

  /** Rows in beat order, trimmed to the most recent `limit` beats. */
  recent(limit = 16): BeatRow[] {
    const beats = [...this.rows.keys()].sort((a, b) => a - b);
    return beats.slice(-limit).map((b) => this.rows.get(b)!);
  }
}
