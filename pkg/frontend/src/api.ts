/** Typed client for the synthesis service JSON API. */

import { SynthesisRequestBody } from "./document.js";

export interface ServiceMeta {
  num_classes: number;
  arch: Record<string, string | null>;
  generator_mode: string;
  uses_styles: boolean;
  max_size: [number, number];
  full_resolution: [number, number];
  class_names: string[];
}

export interface StyleSet {
  class: number;
  centers: number[][];
  counts: number[];
}

export interface SynthesisResult {
  imagePngB64: string;
  stylesUsed: Record<string, number[]>;
  timingMs: number;
}

export interface ApiError {
  status: number;
  code: string;
  message: string;
  field: string;
}

async function errorFromResponse(res: Response): Promise<ApiError> {
  let body: any = {};
  try {
    body = await res.json();
  } catch {
    /* non-JSON error body */
  }
  return {
    status: res.status,
    code: body.code ?? "unknown",
    message: body.message ?? res.statusText,
    field: body.field ?? "",
  };
}

export class ApiClient {
  private styleCache = new Map<number, StyleSet>();
  private inflight: AbortController | null = null;

  constructor(readonly base: string = "") {}

  async meta(): Promise<ServiceMeta> {
    const res = await fetch(`${this.base}/meta`);
    if (!res.ok) {
      throw await errorFromResponse(res);
    }
    return res.json();
  }

  async health(): Promise<string> {
    const res = await fetch(`${this.base}/health`);
    const body = await res.json();
    return body.status;
  }

  /** Styles are fetched lazily and cached per class. */
  async styles(classId: number): Promise<StyleSet> {
    const cached = this.styleCache.get(classId);
    if (cached) {
      return cached;
    }
    const res = await fetch(`${this.base}/styles?class=${classId}`);
    if (!res.ok) {
      throw await errorFromResponse(res);
    }
    const body: StyleSet = await res.json();
    this.styleCache.set(classId, body);
    return body;
  }

  /** POST /synthesize; a newer call aborts the previous in-flight one. */
  async synthesize(body: SynthesisRequestBody): Promise<SynthesisResult> {
    if (this.inflight) {
      this.inflight.abort();
    }
    const controller = new AbortController();
    this.inflight = controller;
    try {
      const res = await fetch(`${this.base}/synthesize`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
        signal: controller.signal,
      });
      if (!res.ok) {
        throw await errorFromResponse(res);
      }
      const payload = await res.json();
      return {
        imagePngB64: payload.image.png_b64,
        stylesUsed: payload.styles_used,
        timingMs: payload.timing_ms,
      };
    } finally {
      if (this.inflight === controller) {
        this.inflight = null;
      }
    }
  }
}
