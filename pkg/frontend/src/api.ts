/**
 * Typed client for the echolex /v1 HTTP API.
 *
 * The UI is a pure API consumer: all similarity math happens server-side and
 * results are rendered exactly in the order the server returns them.
 */

export interface SearchResult {
  clipId: string;
  score: number;
  caption: string;
  speciesCommon: string | null;
  audioUrl: string;
}

export interface SearchResponse {
  results: SearchResult[];
}

export interface LabelScore {
  label: string;
  score: number;
}

export interface ClassifyResponse {
  scores: LabelScore[];
  argmaxLabel: string;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function parseError(res: Response): Promise<ApiError> {
  let detail = res.statusText;
  try {
    const body = await res.json();
    if (body && typeof body.error === "string") detail = body.error;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(res.status, detail);
}

export class EcholexApi {
  constructor(readonly baseUrl: string = "") {}

  /** POST /v1/search; abortable so stale queries can be cancelled. */
  async search(
    text: string,
    k: number,
    signal?: AbortSignal,
  ): Promise<SearchResponse> {
    const res = await fetch(`${this.baseUrl}/v1/search`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text, k }),
      signal,
    });
    if (!res.ok) throw await parseError(res);
    return (await res.json()) as SearchResponse;
  }

  /** POST /v1/classify against an indexed clip. */
  async classify(clipId: string, labels: string[]): Promise<ClassifyResponse> {
    const res = await fetch(`${this.baseUrl}/v1/classify`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ clipId, labels }),
    });
    if (!res.ok) throw await parseError(res);
    return (await res.json()) as ClassifyResponse;
  }

  /** Stream URL for a stored ten-second clip (GET /v1/audio/{clipId}). */
  audioUrl(result: SearchResult): string {
    return `${this.baseUrl}${result.audioUrl}`;
  }
}
