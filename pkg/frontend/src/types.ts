/** Shared value types for the sketchpad and the retrieval service client. */

export interface StrokePoint {
  x: number;
  y: number;
}

/** One pen stroke in canvas coordinates. */
export interface CanvasStroke {
  points: StrokePoint[];
  width: number;
}

export interface CanvasSize {
  width: number;
  height: number;
}

/** One ranked gallery item exactly as the service returned it. */
export interface RetrievalResult {
  id: string;
  className: string;
  score: number;
  thumbnailUrl: string;
}

/** One submitted query with the response it got, kept for refinement compare. */
export interface RetrievalView {
  query: Uint8Array;
  results: RetrievalResult[];
  k: number;
  timestamp: number;
}

export interface HealthInfo {
  status: string;
  gallerySize: number;
  checkpoint: string;
}

export class SchemaError extends Error {}

/** A stroke must have >= 2 in-bounds points and a positive width. */
export function validateStroke(stroke: CanvasStroke, bounds: CanvasSize): void {
  if (stroke.points.length < 2) {
    throw new SchemaError(`stroke needs at least 2 points, got ${stroke.points.length}`);
  }
  if (!Number.isFinite(stroke.width) || stroke.width <= 0) {
    throw new SchemaError(`stroke width must be positive, got ${stroke.width}`);
  }
  for (const p of stroke.points) {
    if (!Number.isFinite(p.x) || !Number.isFinite(p.y)) {
      throw new SchemaError(`stroke point is not finite: (${p.x}, ${p.y})`);
    }
    if (p.x < 0 || p.x > bounds.width || p.y < 0 || p.y > bounds.height) {
      throw new SchemaError(
        `stroke point (${p.x}, ${p.y}) outside canvas ${bounds.width}x${bounds.height}`);
    }
  }
}

function asObject(value: unknown, what: string): Record<string, unknown> {
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    throw new SchemaError(`${what} is not an object`);
  }
  return value as Record<string, unknown>;
}

function asString(value: unknown, what: string): string {
  if (typeof value !== "string") throw new SchemaError(`${what} is not a string`);
  return value;
}

function asNumber(value: unknown, what: string): number {
  if (typeof value !== "number" || !Number.isFinite(value)) {
    throw new SchemaError(`${what} is not a finite number`);
  }
  return value;
}

/**
 * Check a /v1/retrieve body. The list is taken verbatim — no client-side
 * re-ranking — so out-of-order scores are rejected rather than fixed up.
 */
export function parseRetrieveResponse(body: unknown): {
  results: RetrievalResult[];
  latencyMs: number;
} {
  const obj = asObject(body, "response");
  if (!Array.isArray(obj.results)) throw new SchemaError("'results' is not a list");
  const results: RetrievalResult[] = obj.results.map((raw, i) => {
    const r = asObject(raw, `results[${i}]`);
    return {
      id: asString(r.id, `results[${i}].id`),
      className: asString(r.class, `results[${i}].class`),
      score: asNumber(r.score, `results[${i}].score`),
      thumbnailUrl: asString(r.thumbnail_url, `results[${i}].thumbnail_url`),
    };
  });
  for (let i = 1; i < results.length; i++) {
    if (results[i]!.score > results[i - 1]!.score) {
      throw new SchemaError(`results are not sorted by score at index ${i}`);
    }
  }
  return { results, latencyMs: asNumber(obj.latency_ms, "latency_ms") };
}

export function parseHealth(body: unknown): HealthInfo {
  const obj = asObject(body, "health");
  return {
    status: asString(obj.status, "status"),
    gallerySize: asNumber(obj.gallery_size, "gallery_size"),
    checkpoint: asString(obj.checkpoint, "checkpoint"),
  };
}

export function parseClasses(body: unknown): string[] {
  const obj = asObject(body, "classes");
  if (!Array.isArray(obj.classes)) throw new SchemaError("'classes' is not a list");
  return obj.classes.map((c, i) => asString(c, `classes[${i}]`));
}
