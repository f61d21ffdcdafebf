/** HTTP client for the QC service.
 *
 * Every JSON body the console consumes is kept in `consumedResponses`, so
 * tests can assert that nothing the server sent us ever carried golden
 * markers.
 */

import type { AnnotationRow, BatchView, Verdict } from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export class QcApiClient {
  readonly consumedResponses: unknown[] = [];

  constructor(readonly baseUrl: string) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let resp: Response;
    try {
      resp = await fetch(`${this.baseUrl}${path}`, {
        method,
        headers: body !== undefined ? { "Content-Type": "application/json" } : undefined,
        body: body !== undefined ? JSON.stringify(body) : undefined,
      });
    } catch (err) {
      throw new ApiError(0, `network failure: ${String(err)}`);
    }
    const text = await resp.text();
    const payload: unknown = text ? JSON.parse(text) : null;
    if (payload !== null) {
      this.consumedResponses.push(payload);
    }
    if (!resp.ok) {
      const message =
        payload && typeof payload === "object" && "error" in payload
          ? String((payload as { error: unknown }).error)
          : `status ${resp.status}`;
      throw new ApiError(resp.status, message);
    }
    return payload as T;
  }

  nextBatch(raterId: string): Promise<BatchView> {
    return this.request<BatchView>("POST", `/raters/${encodeURIComponent(raterId)}/batches/next`);
  }

  postAnnotations(batchId: string, annotations: AnnotationRow[]): Promise<{ ok: boolean; count: number }> {
    return this.request("POST", `/batches/${encodeURIComponent(batchId)}/annotations`, { annotations });
  }

  submitBatch(batchId: string): Promise<Verdict> {
    return this.request<Verdict>("POST", `/batches/${encodeURIComponent(batchId)}/submit`);
  }
}
