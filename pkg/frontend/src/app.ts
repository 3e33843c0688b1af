/**
 * Sketchpad view-model: strokes in, ranked galleries out.
 *
 * The user loop is draw -> submit -> inspect -> refine -> resubmit, so each
 * successful submission is kept as a RetrievalView (query snapshot plus the
 * verbatim response) in a bounded history for side-by-side comparison.
 * Rules enforced here rather than in the DOM layer: a blank canvas never
 * produces a request, only one request may be in flight, and errors land in
 * an inline banner without touching the drawing.
 */

import { ServiceClient, ServiceError, asServiceError } from "./client.js";
import { exportStrokesPng } from "./raster.js";
import { CanvasSize, CanvasStroke, RetrievalView, StrokePoint } from "./types.js";

export const MAX_HISTORY = 20;
export const DEFAULT_STROKE_WIDTH = 4;

export interface AppOptions {
  canvasSize?: CanvasSize;
  maxHistory?: number;
  defaultK?: number;
  now?: () => number;
}

export class SketchpadApp {
  readonly canvasSize: CanvasSize;
  readonly maxHistory: number;
  defaultK: number;

  strokes: CanvasStroke[] = [];
  pending: CanvasStroke | null = null;
  history: RetrievalView[] = [];
  current: RetrievalView | null = null;
  banner: string | null = null;
  busy = false;

  private readonly client: ServiceClient;
  private readonly now: () => number;
  private readonly listeners: Array<() => void> = [];

  constructor(client: ServiceClient, options: AppOptions = {}) {
    this.client = client;
    this.canvasSize = options.canvasSize ?? { width: 512, height: 512 };
    this.maxHistory = options.maxHistory ?? MAX_HISTORY;
    this.defaultK = options.defaultK ?? 10;
    this.now = options.now ?? Date.now;
  }

  onChange(listener: () => void): () => void {
    this.listeners.push(listener);
    return () => {
      const i = this.listeners.indexOf(listener);
      if (i >= 0) this.listeners.splice(i, 1);
    };
  }

  private notify(): void {
    for (const listener of [...this.listeners]) listener();
  }

  // -- drawing ---------------------------------------------------------------

  private clamp(x: number, y: number): StrokePoint {
    return {
      x: Math.min(this.canvasSize.width, Math.max(0, x)),
      y: Math.min(this.canvasSize.height, Math.max(0, y)),
    };
  }

  beginStroke(x: number, y: number, width: number = DEFAULT_STROKE_WIDTH): void {
    this.pending = { points: [this.clamp(x, y)], width };
    this.notify();
  }

  extendStroke(x: number, y: number): void {
    if (this.pending === null) return;
    this.pending.points.push(this.clamp(x, y));
    this.notify();
  }

  /** Commit the in-progress stroke; a click without movement draws a dot. */
  endStroke(): void {
    if (this.pending === null) return;
    const stroke = this.pending;
    this.pending = null;
    if (stroke.points.length === 1) stroke.points.push({ ...stroke.points[0]! });
    this.strokes.push(stroke);
    this.notify();
  }

  undo(): void {
    this.strokes.pop();
    this.notify();
  }

  clearCanvas(): void {
    this.strokes = [];
    this.pending = null;
    this.notify();
  }

  isBlank(): boolean {
    return this.strokes.length === 0;
  }

  /** 256x256 PNG of the committed strokes; what submit() sends. */
  exportPng(): Uint8Array {
    return exportStrokesPng(this.strokes, this.canvasSize);
  }

  // -- submitting ------------------------------------------------------------

  /**
   * Send the current sketch; returns true when a view was added to history.
   * Blank canvases and concurrent calls return false without any request.
   */
  async submit(k: number = this.defaultK): Promise<boolean> {
    if (this.busy) return false;
    if (this.isBlank()) {
      this.banner = "The canvas is blank — draw something before submitting.";
      this.notify();
      return false;
    }
    this.busy = true;
    this.banner = null;
    this.notify();
    const query = this.exportPng();
    try {
      const { results } = await this.client.retrieve(query, k);
      const view: RetrievalView = { query, results, k, timestamp: this.now() };
      this.current = view;
      this.history.push(view);
      if (this.history.length > this.maxHistory) {
        this.history.splice(0, this.history.length - this.maxHistory);
      }
      return true;
    } catch (err) {
      const e: ServiceError = asServiceError(err);
      this.banner = `${e.kind}: ${e.message}`;
      return false;
    } finally {
      this.busy = false;
      this.notify();
    }
  }
}
