// Browser entry point: wires keyboard -> quantizer -> WebSocket session,
// and accomp_out -> audio scheduling + the beat-grid display.

import { PlaybackScheduler, WebAudioSink } from "./audio.js";
import { SessionClient } from "./client.js";
import { KeyQuantizer } from "./quantizer.js";
import type { AccompOutMessage, ServerMessage } from "./protocol.js";
import { SessionView } from "./view.js";
import { VirtualKeyboard } from "./keyboard.js";

const BPM = 80;

function chordText(label: string | null): string {
  return label ?? "·";
}

function renderView(view: SessionView, grid: HTMLElement, meter: HTMLElement): void {
  grid.innerHTML = "";
  for (const row of view.recent(16)) {
    const div = document.createElement("div");
    div.className = "beat-row" + (row.underrun ? " underrun" : "");
    const melody = row.melody.map((p) => (p === null ? "·" : p)).join(" ");
    div.innerHTML =
      `<span class="beat-no">${row.beat}</span>` +
      `<span class="melody">${melody}</span>` +
      `<span class="cached">${chordText(row.cachedChord)}</span>` +
      `<span class="predicted ${row.playedAt}">${chordText(row.predictedChord)}</span>`;
    grid.appendChild(div);
  }
  meter.textContent =
    `margin ${view.latency.marginBeats.toFixed(2)} beats | ` +
    `underruns ${view.latency.underruns} | ${view.connection}` +
    (view.banner ? ` | ${view.banner}` : "");
}

export async function boot(document: Document, window: Window): Promise<void> {
  const grid = document.getElementById("grid")!;
  const meter = document.getElementById("meter")!;
  const status = document.getElementById("status")!;
  const view = new SessionView();

  const context = new AudioContext();
  const sink = new WebAudioSink(context);
  let scheduler: PlaybackScheduler | null = null;
  let quantizer: KeyQuantizer | null = null;
  let sessionStartMs = 0;

  const client = new SessionClient(
    (window as Window & { CHORDFLOW_URL?: string }).CHORDFLOW_URL ??
      "ws://127.0.0.1:8765/stream",
    (url) => new WebSocket(url) as unknown as import("./client.js").SocketLike,
    {
      bpm: BPM,
      tonality: { tonic: 0, mode: "major" },
      onState: (state, detail) => {
        view.connection = state;
        status.textContent = detail ? `${state}: ${detail}` : state;
        renderView(view, grid, meter);
      },
      onMessage: (message: ServerMessage) => {
        view.apply(message);
        if (message.type === "accomp_out" && scheduler) {
          const accomp = message as AccompOutMessage;
          const result = scheduler.schedule(accomp);
          view.markScheduled(
            accomp.beat,
            result.skippedLate,
            result.marginMs / (60000 / BPM),
          );
        }
        renderView(view, grid, meter);
      },
    },
  );

  await client.connect();
  sessionStartMs = sink.nowMs();
  scheduler = new PlaybackScheduler(sink, BPM, sessionStartMs);
  quantizer = new KeyQuantizer(BPM, sessionStartMs);

  const keyboard = new VirtualKeyboard(
    (pitch, on, t) => {
      quantizer?.keyInput(pitch, on, t);
    },
    () => sink.nowMs(),
  );
  document.getElementById("keys")!.appendChild(keyboard.element);
  keyboard.attachComputerKeys(window);
  void keyboard.attachWebMidi(window.navigator);

  // drain the quantizer on a fine timer; each decided step goes on the wire
  window.setInterval(() => {
    if (!quantizer) {
      return;
    }
    for (const { step, pitch } of quantizer.flush(sink.nowMs())) {
      client.sendMelody(step, pitch);
      view.noteMelody(step, pitch);
    }
    renderView(view, grid, meter);
  }, 40);

  window.addEventListener("beforeunload", () => {
    client.end();
    client.close();
  });
}

declare global {
  interface Window {
    CHORDFLOW_URL?: string;
  }
}

if (typeof document !== "undefined" && document.getElementById("grid")) {
  void boot(document, window);
}
