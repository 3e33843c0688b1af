/**
 * In-process stand-in for the retrieval service, covering the whole /v1
 * schema: health, classes, retrieve (with the real BadK/BadImage semantics)
 * and thumbnails. Component tests run the UI against this instead of a
 * network server.
 *
 * Scores are a pure function of (uploaded bytes, item id), so rankings are
 * deterministic, identical uploads rank identically, and a refined sketch
 * reshuffles the gallery — which is exactly what history comparison needs.
 */

import { fromBase64, hashBytes } from "./raster.js";

export interface FixtureItem {
  id: string;
  className: string;
  thumbnail: Uint8Array;
}

export interface LoggedRequest {
  method: string;
  path: string;
  body?: unknown;
}

interface FixtureResponse {
  status: number;
  json?: unknown;
  bytes?: Uint8Array;
  contentType: string;
}

export interface FixtureOptions {
  checkpoint?: string;
  /** Pin exact scores per item id; unpinned items fall back to hashing. */
  fixedScores?: Record<string, number>;
}

export class FixtureService {
  readonly items: FixtureItem[];
  readonly log: LoggedRequest[] = [];
  private readonly checkpoint: string;
  private readonly fixedScores: Record<string, number>;

  constructor(items: FixtureItem[], options: FixtureOptions = {}) {
    this.items = items;
    this.checkpoint = options.checkpoint ?? "fixture-checkpoint";
    this.fixedScores = options.fixedScores ?? {};
  }

  score(image: Uint8Array, id: string): number {
    const pinned = this.fixedScores[id];
    if (pinned !== undefined) return pinned;
    const idBytes = new Uint8Array([...id].map((c) => c.charCodeAt(0)));
    const mixed = new Uint8Array(image.length + idBytes.length);
    mixed.set(image, 0);
    mixed.set(idBytes, image.length);
    // map the 32-bit hash into (-1, 1) like a cosine score
    return (hashBytes(mixed) / 0xffffffff) * 2 - 1;
  }

  handle(method: string, path: string, body?: unknown): FixtureResponse {
    this.log.push({ method, path, ...(body === undefined ? {} : { body }) });
    if (method === "GET" && path === "/v1/health") {
      return {
        status: 200,
        json: { status: "ok", gallery_size: this.items.length, checkpoint: this.checkpoint },
        contentType: "application/json",
      };
    }
    if (method === "GET" && path === "/v1/classes") {
      const classes = [...new Set(this.items.map((item) => item.className))].sort();
      return { status: 200, json: { classes }, contentType: "application/json" };
    }
    if (method === "POST" && path === "/v1/retrieve") {
      return this.retrieve(body);
    }
    const thumb = path.match(/^\/v1\/thumbnail\/(.+)$/);
    if (method === "GET" && thumb) {
      const item = this.items.find((it) => it.id === decodeURIComponent(thumb[1]!));
      if (item === undefined) {
        return this.error(404, "MissingFile", `no thumbnail for '${thumb[1]}'`);
      }
      return { status: 200, bytes: item.thumbnail, contentType: "image/png" };
    }
    return this.error(404, "NotFound", `no route ${method} ${path}`);
  }

  private retrieve(body: unknown): FixtureResponse {
    const payload = (typeof body === "object" && body !== null ? body : {}) as
      Record<string, unknown>;
    const k = payload.k ?? 10;
    if (typeof k !== "number" || !Number.isInteger(k) || k < 1 || k > this.items.length) {
      return this.error(422, "BadK", `k must be an integer in [1, ${this.items.length}]`);
    }
    const encoded = payload.image;
    if (typeof encoded !== "string" || encoded.length === 0) {
      return this.error(400, "BadImage", "missing base64 'image' field");
    }
    let image: Uint8Array;
    try {
      image = fromBase64(encoded);
    } catch (err) {
      return this.error(400, "BadImage", String(err));
    }
    const ranked = this.items
      .map((item) => ({ item, score: this.score(image, item.id) }))
      .sort((a, b) => b.score - a.score || (a.item.id < b.item.id ? -1 : 1))
      .slice(0, k)
      .map(({ item, score }) => ({
        id: item.id,
        class: item.className,
        score,
        thumbnail_url: `/v1/thumbnail/${item.id}`,
      }));
    return {
      status: 200,
      json: { results: ranked, latency_ms: 0.0 },
      contentType: "application/json",
    };
  }

  private error(status: number, type: string, message: string): FixtureResponse {
    return { status, json: { error: { type, message } }, contentType: "application/json" };
  }

  /** fetch-compatible adapter so a ServiceClient can talk to the fixture. */
  asFetch(): typeof fetch {
    return async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
      const url = typeof input === "string" ? input
        : input instanceof URL ? input.toString() : input.url;
      const method = init?.method ?? "GET";
      let body: unknown;
      if (typeof init?.body === "string") {
        try {
          body = JSON.parse(init.body);
        } catch {
          body = undefined;
        }
      }
      const out = this.handle(method, new URL(url, "http://fixture.local").pathname, body);
      const payload = out.bytes !== undefined
        ? new Uint8Array(out.bytes)
        : JSON.stringify(out.json ?? null);
      return new Response(payload, {
        status: out.status,
        headers: {
          "content-type": out.contentType,
          "access-control-allow-origin": "*",
        },
      });
    };
  }
}

/** A small colorful gallery for tests: ids g0..g{n-1} cycling over classes. */
export function makeFixtureGallery(n: number, classNames: string[]): FixtureItem[] {
  const items: FixtureItem[] = [];
  for (let i = 0; i < n; i++) {
    items.push({
      id: `g${i}`,
      className: classNames[i % classNames.length]!,
      thumbnail: new Uint8Array([0x89, 0x50, 0x4e, 0x47, i & 0xff]),
    });
  }
  return items;
}
