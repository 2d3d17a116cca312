/** Thin fetch wrapper for the prediction service. Responses are passed
 * through as parsed JSON — all displayed numbers originate here. */

import type { ModelDoc, PredictRequest, PredictResponse } from "./types";

export class ApiError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

function checkModelDoc(doc: unknown): ModelDoc {
  const d = doc as ModelDoc;
  if (
    typeof d !== "object" ||
    d === null ||
    typeof d.association_form !== "string" ||
    !Array.isArray(d.lambda) ||
    !Array.isArray(d.boundary) ||
    d.boundary.length !== 2
  ) {
    throw new ApiError("malformed model metadata");
  }
  for (const term of d.lambda) {
    if (
      !Array.isArray(term.t) ||
      !Array.isArray(term.mean) ||
      term.t.length !== term.mean.length
    ) {
      throw new ApiError("malformed model metadata");
    }
  }
  return d;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async getModel(): Promise<ModelDoc> {
    const res = await this.fetchFn(`${this.baseUrl}/model`);
    if (!res.ok) {
      throw new ApiError(`service returned ${res.status}`, res.status);
    }
    return checkModelDoc(await res.json());
  }

  async predict(
    body: PredictRequest,
    signal?: AbortSignal,
  ): Promise<PredictResponse> {
    const res = await this.fetchFn(`${this.baseUrl}/predict`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    if (!res.ok) {
      let detail = `service returned ${res.status}`;
      try {
        const doc = (await res.json()) as { detail?: string };
        if (typeof doc.detail === "string") detail = doc.detail;
      } catch {
        // keep the status-line message
      }
      throw new ApiError(detail, res.status);
    }
    const doc = (await res.json()) as PredictResponse;
    if (!Array.isArray(doc.pi)) {
      throw new ApiError("malformed prediction response");
    }
    return doc;
  }
}

export function isAbortError(err: unknown): boolean {
  return err instanceof Error && err.name === "AbortError";
}
