// WebSocket session client with handshake and reconnect backoff.
//
// The socket constructor is injected so the same client runs in the
// browser (native WebSocket) and under node tests (the ws package).

import type { ClientMessage, ServerMessage, TonalitySpec } from "./protocol.js";
import { parseServerMessage } from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((event?: unknown) => void) | null;
  onmessage: ((event: { data: unknown }) => void) | null;
  onclose: ((event?: unknown) => void) | null;
  onerror: ((event?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export type ConnectionState = "connecting" | "connected" | "retrying" | "closed" | "failed";

export interface SessionOptions {
  bpm: number;
  tonality: TonalitySpec;
  maxRetries?: number;
  backoffMs?: number;
  onMessage?: (message: ServerMessage) => void;
  onState?: (state: ConnectionState, detail?: string) => void;
}

const DEFAULT_BACKOFF_MS = 250;

export class SessionClient {
  state: ConnectionState = "connecting";
  private socket: SocketLike | null = null;
  private retries = 0;
  private closedByUser = false;

  constructor(
    private readonly url: string,
    private readonly makeSocket: SocketFactory,
    private readonly options: SessionOptions,
  ) {}

  /** Open the socket and perform the start handshake; resolves once the
   * server acknowledges. Retries with linear backoff on failure. */
  connect(): Promise<void> {
    return new Promise((resolve, reject) => {
      const attempt = () => {
        this.setState(this.retries ? "retrying" : "connecting");
        let socket: SocketLike;
        try {
          socket = this.makeSocket(this.url);
        } catch (error) {
          this.scheduleRetry(attempt, reject, String(error));
          return;
        }
        this.socket = socket;
        let handshook = false;
        socket.onopen = () => {
          socket.send(
            JSON.stringify({
              type: "start",
              bpm: this.options.bpm,
              tonality: this.options.tonality,
            } satisfies ClientMessage),
          );
        };
        socket.onmessage = (event) => {
          const message = parseServerMessage(String(event.data));
          if (!message) {
            return;
          }
          if (!handshook) {
            if (message.type === "started") {
              handshook = true;
              this.setState("connected");
              resolve();
            } else if (message.type === "error") {
              this.closedByUser = true;
              this.setState("failed", String((message as { message?: string }).message));
              socket.close();
              reject(new Error(`handshake rejected: ${(message as { message?: string }).message}`));
              return;
            }
          }
          this.options.onMessage?.(message);
        };
        socket.onerror = () => {
          if (!handshook) {
            this.scheduleRetry(attempt, reject, "socket error");
          }
        };
        socket.onclose = () => {
          if (handshook && !this.closedByUser) {
            this.setState("closed");
          }
        };
      };
      attempt();
    });
  }

  private scheduleRetry(attempt: () => void, reject: (e: Error) => void, detail: string): void {
    const max = this.options.maxRetries ?? 3;
    if (this.closedByUser || this.retries >= max) {
      this.setState("failed", detail);
      reject(new Error(`connection failed after ${this.retries} retries: ${detail}`));
      return;
    }
    this.retries += 1;
    const backoff = (this.options.backoffMs ?? DEFAULT_BACKOFF_MS) * this.retries;
    this.setState("retrying", detail);
    setTimeout(attempt, backoff);
  }

  private setState(state: ConnectionState, detail?: string): void {
    this.state = state;
    this.options.onState?.(state, detail);
  }

  sendMelody(step: number, pitch: number | null): void {
    this.socket?.send(JSON.stringify({ type: "melody_in", step, pitch } satisfies ClientMessage));
  }

  end(): void {
    this.socket?.send(JSON.stringify({ type: "end" } satisfies ClientMessage));
  }

  close(): void {
    this.closedByUser = true;
    this.socket?.close();
    this.setState("closed");
  }
}
