/** Typed client for the attribution service. The UI never computes
 * attribution numbers itself; everything rendered comes from these payloads. */

export interface DocSummary {
  doc_id: number;
  snippet: string;
  true_label: number;
  predicted_label: number;
  probs: number[];
}

export interface DocList {
  page: number;
  page_size: number;
  total: number;
  docs: DocSummary[];
}

export interface Highlight {
  token: string;
  word_score: number;
  intensity: number;
  sign: -1 | 0 | 1;
}

export interface AttributionPayload {
  doc_id: number;
  class: number;
  method: string;
  epsilon: number | null;
  logit_value: number;
  tokens: Highlight[];
  column_scores: number[];
  filter_scores: number[];
}

export interface DiffPayload {
  doc_id: number;
  class_a: number;
  class_b: number;
  method: string;
  column_diffs: number[];
  filter_diffs: number[];
}

export interface WhatIfResponse {
  doc_id: number;
  probs_before: number[];
  probs_after: number[];
  predicted_before: number;
  predicted_after: number;
}

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
  }
}

async function parseOrThrow<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = `${resp.status}`;
    try {
      const body = (await resp.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string, query?: Record<string, string | number>): string {
    const u = new URL(path, this.baseUrl);
    for (const [k, v] of Object.entries(query ?? {})) u.searchParams.set(k, String(v));
    return u.toString();
  }

  async listDocs(page = 1, pageSize = 20): Promise<DocList> {
    const resp = await fetch(this.url("/docs", { page, page_size: pageSize }));
    return parseOrThrow<DocList>(resp);
  }

  async attribution(docId: number, targetClass: number, method: string): Promise<AttributionPayload> {
    const resp = await fetch(
      this.url(`/docs/${docId}/attribution`, { class: targetClass, method }));
    return parseOrThrow<AttributionPayload>(resp);
  }

  async diff(docId: number, classA: number, classB: number, method: string): Promise<DiffPayload> {
    const resp = await fetch(
      this.url(`/docs/${docId}/diff`, { class_a: classA, class_b: classB, method }));
    return parseOrThrow<DiffPayload>(resp);
  }

  async whatIf(docId: number, zeroColumns: number[], zeroFilters: number[],
               signal?: AbortSignal): Promise<WhatIfResponse> {
    const resp = await fetch(this.url(`/docs/${docId}/whatif`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ zero_columns: zeroColumns, zero_filters: zeroFilters }),
      signal,
    });
    return parseOrThrow<WhatIfResponse>(resp);
  }
}

export async function loadConfig(): Promise<{ apiBaseUrl: string }> {
  const resp = await fetch("./config.json");
  if (!resp.ok) throw new ApiError(resp.status, "missing config.json");
  return (await resp.json()) as { apiBaseUrl: string };
}
