// Virtual piano keyboard (pointer + computer keys) and optional hardware
// MIDI input. Emits raw key gestures; quantization happens elsewhere.

export type KeyHandler = (pitch: number, on: boolean, timestampMs: number) => void;

// home-row mapping, C4 at "a"
const KEYMAP: Record<string, number> = {
  a: 60, w: 61, s: 62, e: 63, d: 64, f: 65, t: 66,
  g: 67, y: 68, h: 69, u: 70, j: 71, k: 72, o: 73, l: 74,
};

const BLACK = new Set([1, 3, 6, 8, 10]);

export class VirtualKeyboard {
  readonly element: HTMLElement;
  private readonly down = new Set<number>();

  constructor(
    private readonly handler: KeyHandler,
    private readonly now: () => number,
    lowPitch = 48,
    highPitch = 84,
  ) {
    this.element = document.createElement("div");
    this.element.className = "keyboard";
    for (let pitch = lowPitch; pitch <= highPitch; pitch += 1) {
      this.element.appendChild(this.makeKey(pitch));
    }
  }

  private makeKey(pitch: number): HTMLElement {
    const key = document.createElement("button");
    key.className = BLACK.has(pitch % 12) ? "key black" : "key white";
    key.dataset.pitch = String(pitch);
    key.addEventListener("pointerdown", (event) => {
      event.preventDefault();
      this.press(pitch);
    });
    const release = () => this.release(pitch);
    key.addEventListener("pointerup", release);
    key.addEventListener("pointerleave", release);
    return key;
  }

  press(pitch: number): void {
    if (this.down.has(pitch)) {
      return;
    }
    this.down.add(pitch);
    this.paint(pitch, true);
    this.handler(pitch, true, this.now());
  }

  release(pitch: number): void {
    if (!this.down.delete(pitch)) {
      return;
    }
    this.paint(pitch, false);
    this.handler(pitch, false, this.now());
  }

  private paint(pitch: number, active: boolean): void {
    const key = this.element.querySelector(`[data-pitch="${pitch}"]`);
    key?.classList.toggle("active", active);
  }

  /** Computer-keyboard fallback for laptops without pointers or MIDI. */
  attachComputerKeys(target: Pick<Window, "addEventListener">): void {
    target.addEventListener("keydown", (event: Event) => {
      const key = (event as KeyboardEvent).key?.toLowerCase();
      const pitch = KEYMAP[key];
      if (pitch !== undefined && !(event as KeyboardEvent).repeat) {
        this.press(pitch);
      }
    });
    target.addEventListener("keyup", (event: Event) => {
      const pitch = KEYMAP[(event as KeyboardEvent).key?.toLowerCase()];
      if (pitch !== undefined) {
        this.release(pitch);
      }
    });
  }

  /** Optional hardware input via the Web MIDI API, when the browser has it. */
  async attachWebMidi(nav: Navigator): Promise<boolean> {
    interface MidiInput {
      onmidimessage: ((e: { data: Uint8Array }) => void) | null;
    }
    const anyNav = nav as Navigator & {
      requestMIDIAccess?: () => Promise<unknown>;
    };
    if (!anyNav.requestMIDIAccess) {
      return false;
    }
    const access = (await anyNav.requestMIDIAccess()) as unknown as {
      inputs: Map<string, MidiInput>;
    };
    for (const input of access.inputs.values()) {
      input.onmidimessage = (event: { data: Uint8Array }) => {
        const [status, pitch, velocity] = event.data;
        const kind = status & 0xf0;
        if (kind === 0x90 && velocity > 0) {
          this.press(pitch);
        } else if (kind === 0x80 || (kind === 0x90 && velocity === 0)) {
          this.release(pitch);
        }
      };
    }
    return true;
  }
}
