// Wire protocol of the streaming service (NDJSON / WebSocket text frames).

export interface TonalitySpec {
  tonic: number; // pitch class 0..11
  mode: "major" | "minor";
}

export interface StartMessage {
  type: "start";
  bpm: number;
  tonality: TonalitySpec;
}

export interface MelodyInMessage {
  type: "melody_in";
  step: number; // sixteenth index from session start
  pitch: number | null; // MIDI pitch, null = silence
}

export interface EndMessage {
  type: "end";
}

export type ClientMessage = StartMessage | MelodyInMessage | EndMessage;

export interface TrackEventWire {
  instr: string;
  pitch: number;
  onset: number; // absolute beats
  dur: number; // beats
  vel: number; // MIDI velocity
}

export interface AccompOutMessage {
  type: "accomp_out";
  beat: number;
  chord: number[];
  chord_label?: string;
  tracks: TrackEventWire[];
  emit_ts_us: number;
  timestamp_us?: number;
}

export interface ChordCachedMessage {
  type: "chord_cached";
  beat: number;
  chord_label: string;
}

export interface ChordPredictedMessage {
  type: "chord_predicted";
  beat: number;
  chord_label: string;
  source?: string;
  underrun?: boolean;
}

export interface LatencyReportMessage {
  type: "latency_report";
  beats: number;
  logical_latency_beats_max: number;
  emit_margin_beats_mean: number;
  underruns: number;
}

export interface StartedMessage {
  type: "started";
  bpm: number;
}

export interface ErrorMessage {
  type: "error";
  message: string;
}

export type ServerMessage =
  | AccompOutMessage
  | ChordCachedMessage
  | ChordPredictedMessage
  | LatencyReportMessage
  | StartedMessage
  | ErrorMessage
  | { type: string; [key: string]: unknown };

export function parseServerMessage(raw: string): ServerMessage | null {
  try {
    const body = JSON.parse(raw);
    if (body && typeof body.type === "string") {
      return body as ServerMessage;
    }
    return null;
  } catch {
    return null;
  }
}

export function stepsPerSecond(bpm: number): number {
  return (4 * bpm) / 60;
}

export function stepPeriodMs(bpm: number): number {
  return 60000 / (4 * bpm);
}

export function beatPeriodMs(bpm: number): number {
  return 60000 / bpm;
}
