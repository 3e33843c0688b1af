/**
 * Thin client for the retrieval service's /v1 HTTP API.
 *
 * One base-URL setting, one request in flight at a time (enforced by the
 * app layer), and a hard per-request timeout so a stalled service cannot
 * leave the submit button dead. Every failure is normalized to a
 * ServiceError whose kind is the service's error type ("BadImage", "BadK",
 * "MissingFile") or a client-side one ("Network", "Timeout", "BadResponse").
 */

import {
  HealthInfo,
  RetrievalResult,
  SchemaError,
  parseClasses,
  parseHealth,
  parseRetrieveResponse,
} from "./types.js";
import { toBase64 } from "./raster.js";

export const DEFAULT_TIMEOUT_MS = 5000;

export class ServiceError extends Error {
  kind: string;
  status?: number;

  constructor(kind: string, message: string, status?: number) {
    super(message);
    this.kind = kind;
    this.status = status;
  }
}

export interface ClientOptions {
  baseUrl: string;
  fetchFn?: typeof fetch;
  timeoutMs?: number;
}

export class ServiceClient {
  readonly baseUrl: string;
  private readonly fetchFn: typeof fetch;
  private readonly timeoutMs: number;

  constructor(options: ClientOptions) {
    this.baseUrl = options.baseUrl.replace(/\/+$/, "");
    this.fetchFn = options.fetchFn ?? fetch;
    this.timeoutMs = options.timeoutMs ?? DEFAULT_TIMEOUT_MS;
  }

  /** Absolute URL for a service-relative path such as a thumbnail_url. */
  resolve(path: string): string {
    return new URL(path, this.baseUrl + "/").toString();
  }

  async health(): Promise<HealthInfo> {
    try {
      return parseHealth(await this.request("GET", "/v1/health"));
    } catch (err) {
      throw asServiceError(err);
    }
  }

  async classes(): Promise<string[]> {
    try {
      return parseClasses(await this.request("GET", "/v1/classes"));
    } catch (err) {
      throw asServiceError(err);
    }
  }

  async retrieve(png: Uint8Array, k: number): Promise<{
    results: RetrievalResult[];
    latencyMs: number;
  }> {
    try {
      const body = { image: toBase64(png), k };
      return parseRetrieveResponse(await this.request("POST", "/v1/retrieve", body));
    } catch (err) {
      throw asServiceError(err);
    }
  }

  thumbnailUrl(relative: string): string {
    return this.resolve(relative);
  }

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const controller = new AbortController();
    const timer = setTimeout(() => controller.abort(), this.timeoutMs);
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, {
        method,
        signal: controller.signal,
        ...(body === undefined
          ? {}
          : { headers: { "content-type": "application/json" },
              body: JSON.stringify(body) }),
      });
    } catch (err) {
      if (controller.signal.aborted) {
        throw new ServiceError("Timeout", `no response within ${this.timeoutMs} ms`);
      }
      throw new ServiceError("Network", `service unreachable: ${String(err)}`);
    } finally {
      clearTimeout(timer);
    }
    let parsed: unknown = null;
    try {
      parsed = await response.json();
    } catch {
      if (response.ok) throw new ServiceError("BadResponse", "response body is not JSON");
    }
    if (!response.ok) {
      const err = (parsed as { error?: { type?: string; message?: string } } | null)?.error;
      throw new ServiceError(err?.type ?? "Http",
                             err?.message ?? `HTTP ${response.status}`,
                             response.status);
    }
    return parsed;
  }
}

/** Wrap the schema check so callers see a ServiceError like everything else. */
export function asServiceError(err: unknown): ServiceError {
  if (err instanceof ServiceError) return err;
  if (err instanceof SchemaError) return new ServiceError("BadResponse", err.message);
  return new ServiceError("Internal", String(err));
}
