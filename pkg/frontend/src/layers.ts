/**
 * Binary drawing layers for mask and sketch annotation.
 *
 * Layers hold strictly 0/1 pixels, rasterize brush paths as stamped disks
 * along each segment with clipping at the canvas edge, keep an undo stack of
 * inverse diffs, and export as strict {0, 255} grayscale PNGs.
 */

import { encodePng } from "./png";

export interface PathPoint {
  x: number;
  y: number;
}

interface Diff {
  /** flat pixel indices that flipped, and the value they had before */
  indices: number[];
  before: number[];
}

export class BinaryLayer {
  readonly width: number;
  readonly height: number;
  readonly data: Uint8Array;
  private undoStack: Diff[] = [];

  constructor(height: number, width: number) {
    if (height < 1 || width < 1) throw new Error(`degenerate layer ${height}x${width}`);
    this.width = width;
    this.height = height;
    this.data = new Uint8Array(width * height);
  }

  isEmpty(): boolean {
    return !this.data.some((v) => v !== 0);
  }

  count(): number {
    let n = 0;
    for (const v of this.data) n += v;
    return n;
  }

  /**
   * Rasterize a brush path onto the layer. Each path segment stamps disks of
   * the given radius; erase clears instead of sets. Out-of-bounds portions
   * are clipped. Records the inverse on the undo stack (no-op strokes record
   * nothing).
   */
  drawStroke(path: PathPoint[], radius: number, erase = false): void {
    if (path.length === 0) return;
    const target = erase ? 0 : 1;
    const diff: Diff = { indices: [], before: [] };
    const stamp = (cx: number, cy: number) => {
      const r = Math.max(0, radius);
      const x0 = Math.max(0, Math.floor(cx - r));
      const x1 = Math.min(this.width - 1, Math.ceil(cx + r));
      const y0 = Math.max(0, Math.floor(cy - r));
      const y1 = Math.min(this.height - 1, Math.ceil(cy + r));
      for (let y = y0; y <= y1; y++) {
        for (let x = x0; x <= x1; x++) {
          const dx = x - cx;
          const dy = y - cy;
          if (dx * dx + dy * dy > r * r) continue;
          const idx = y * this.width + x;
          if (this.data[idx] !== target) {
            diff.indices.push(idx);
            diff.before.push(this.data[idx]);
            this.data[idx] = target;
          }
        }
      }
    };
    stamp(path[0].x, path[0].y);
    for (let i = 1; i < path.length; i++) {
      const a = path[i - 1];
      const b = path[i];
      const steps = Math.max(1, Math.ceil(Math.hypot(b.x - a.x, b.y - a.y)));
      for (let s = 1; s <= steps; s++) {
        const t = s / steps;
        stamp(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
      }
    }
    if (diff.indices.length > 0) this.undoStack.push(diff);
  }

  canUndo(): boolean {
    return this.undoStack.length > 0;
  }

  undo(): boolean {
    const diff = this.undoStack.pop();
    if (!diff) return false;
    for (let i = 0; i < diff.indices.length; i++) {
      this.data[diff.indices[i]] = diff.before[i];
    }
    return true;
  }

  clear(): void {
    const diff: Diff = { indices: [], before: [] };
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i] !== 0) {
        diff.indices.push(i);
        diff.before.push(this.data[i]);
        this.data[i] = 0;
      }
    }
    if (diff.indices.length > 0) this.undoStack.push(diff);
  }

  /** Strict binary PNG: every exported pixel is exactly 0 or 255. */
  toPngBytes(): Uint8Array {
    const px = new Uint8Array(this.data.length);
    for (let i = 0; i < this.data.length; i++) px[i] = this.data[i] ? 255 : 0;
    return encodePng({ width: this.width, height: this.height, channels: 1, data: px });
  }
}

/** Brush defaults: wide for region masks, hairline for sketches. */
export const BRUSH_DEFAULTS = { mask: 6, sketch: 1.2 } as const;

export class LayerStack {
  readonly height: number;
  readonly width: number;
  readonly mask: BinaryLayer;
  readonly sketch: BinaryLayer;

  constructor(height: number, width: number) {
    this.height = height;
    this.width = width;
    this.mask = new BinaryLayer(height, width);
    this.sketch = new BinaryLayer(height, width);
  }

  layer(kind: "mask" | "sketch"): BinaryLayer {
    return kind === "mask" ? this.mask : this.sketch;
  }

  clearAnnotations(): void {
    this.mask.clear();
    this.sketch.clear();
  }

  readyToSubmit(): boolean {
    return !this.mask.isEmpty();
  }
}
