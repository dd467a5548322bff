/** Client-side editing model: label + instance grids with undo and styles. */

import { encodeRLE, RlePayload } from "./rle.js";

export type StyleChoice =
  | { cluster: number }
  | { vector: [number, number, number] }
  | "random";

export interface SynthesisRequestBody {
  label: { rle: RlePayload };
  instance: { rle: RlePayload };
  styles: Record<string, StyleChoice>;
  seed: number;
}

interface Snapshot {
  labels: Int32Array;
  instances: Int32Array;
}

export const UNDO_DEPTH = 50;

export class EditorDocument {
  readonly height: number;
  readonly width: number;
  labels: Int32Array;
  instances: Int32Array;
  styles: Map<number, StyleChoice> = new Map();
  dirty = false;
  private nextId = 1;
  private undoStack: Snapshot[] = [];
  private redoStack: Snapshot[] = [];
  private strokeOpen = false;
  /** Fires when a class stroke forces whole instances to a new class. */
  onInstanceReassigned: ((ids: number[], classId: number) => void) | null = null;

  constructor(height: number, width: number, backgroundClass = 0) {
    this.height = height;
    this.width = width;
    this.labels = new Int32Array(height * width).fill(backgroundClass);
    this.instances = new Int32Array(height * width);
  }

  private snapshot(): Snapshot {
    return { labels: this.labels.slice(), instances: this.instances.slice() };
  }

  private restore(s: Snapshot) {
    this.labels = s.labels.slice();
    this.instances = s.instances.slice();
  }

  allocateInstanceId(): number {
    return this.nextId++;
  }

  get nextInstanceId(): number {
    return this.nextId;
  }

  beginStroke() {
    if (this.strokeOpen) {
      return;
    }
    this.undoStack.push(this.snapshot());
    if (this.undoStack.length > UNDO_DEPTH) {
      this.undoStack.shift();
    }
    this.redoStack = [];
    this.strokeOpen = true;
  }

  endStroke() {
    this.strokeOpen = false;
  }

  private *brushPixels(cx: number, cy: number, radius: number) {
    const r2 = radius * radius;
    const y0 = Math.max(0, Math.floor(cy - radius));
    const y1 = Math.min(this.height - 1, Math.ceil(cy + radius));
    const x0 = Math.max(0, Math.floor(cx - radius));
    const x1 = Math.min(this.width - 1, Math.ceil(cx + radius));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r2) {
          yield y * this.width + x;
        }
      }
    }
  }

  /**
   * Class brush: paints label pixels and detaches them from any instance.
   * Instances partially covered keep their remaining pixels but are
   * reassigned to the new class as a whole so the one-class-per-instance
   * invariant holds; listeners are told which ones moved.
   */
  paintClass(cx: number, cy: number, radius: number, classId: number) {
    this.beginStroke();
    const touched = new Set<number>();
    for (const idx of this.brushPixels(cx, cy, radius)) {
      const inst = this.instances[idx];
      if (inst !== 0) {
        touched.add(inst);
        this.instances[idx] = 0;
      }
      this.labels[idx] = classId;
    }
    const reassigned: number[] = [];
    for (const inst of touched) {
      for (let i = 0; i < this.instances.length; i++) {
        if (this.instances[i] === inst) {
          if (this.labels[i] !== classId) {
            reassigned.push(inst);
          }
          break;
        }
      }
    }
    if (reassigned.length && this.onInstanceReassigned) {
      this.onInstanceReassigned(reassigned, classId);
    }
    this.dirty = true;
  }

  /** Instance brush: assigns the instance ID and its class together. */
  paintInstance(cx: number, cy: number, radius: number, instanceId: number, classId: number) {
    this.beginStroke();
    for (const idx of this.brushPixels(cx, cy, radius)) {
      this.instances[idx] = instanceId;
      this.labels[idx] = classId;
    }
    this.dirty = true;
  }

  /** Eraser: clears the instance ID, leaving the class label in place. */
  eraseInstance(cx: number, cy: number, radius: number) {
    this.beginStroke();
    for (const idx of this.brushPixels(cx, cy, radius)) {
      this.instances[idx] = 0;
    }
    this.dirty = true;
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (!prev) {
      return false;
    }
    this.redoStack.push(this.snapshot());
    this.restore(prev);
    this.strokeOpen = false;
    this.dirty = true;
    return true;
  }

  redo(): boolean {
    const next = this.redoStack.pop();
    if (!next) {
      return false;
    }
    this.undoStack.push(this.snapshot());
    this.restore(next);
    this.strokeOpen = false;
    this.dirty = true;
    return true;
  }

  instancesPresent(): number[] {
    const seen = new Set<number>();
    for (const v of this.instances) {
      if (v !== 0) {
        seen.add(v);
      }
    }
    return [...seen].sort((a, b) => a - b);
  }

  classOfInstance(instanceId: number): number | null {
    for (let i = 0; i < this.instances.length; i++) {
      if (this.instances[i] === instanceId) {
        return this.labels[i];
      }
    }
    return null;
  }

  setStyle(instanceId: number, choice: StyleChoice) {
    this.styles.set(instanceId, choice);
    this.dirty = true;
  }

  /** Boundary pixels (4-neighbor rule), for the overlay rendering. */
  boundaryMask(): Uint8Array {
    const mask = new Uint8Array(this.height * this.width);
    const { height: h, width: w, instances: g } = this;
    for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) {
        const i = y * w + x;
        if (
          (x + 1 < w && g[i] !== g[i + 1]) ||
          (x > 0 && g[i] !== g[i - 1]) ||
          (y + 1 < h && g[i] !== g[i + w]) ||
          (y > 0 && g[i] !== g[i - w])
        ) {
          mask[i] = 1;
        }
      }
    }
    return mask;
  }

  toRequestBody(seed: number): SynthesisRequestBody {
    const styles: Record<string, StyleChoice> = {};
    for (const id of this.instancesPresent()) {
      const choice = this.styles.get(id);
      if (choice) {
        styles[String(id)] = choice;
      }
    }
    return {
      label: { rle: encodeRLE(this.labels, this.height, this.width) },
      instance: { rle: encodeRLE(this.instances, this.height, this.width) },
      styles,
      seed,
    };
  }
}
