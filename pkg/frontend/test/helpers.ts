/** Shared test doubles: a scripted fetch and a seeded top-k response. */

import { SearchResult } from "../src/api.js";

export function seededResults(): SearchResult[] {
  return [
    { clipId: "watkins-0042", score: 0.91234, caption: "Sperm whale clicks in a steady train", speciesCommon: "Sperm Whale", audioUrl: "/v1/audio/watkins-0042" },
    { clipId: "watkins-0007", score: 0.88811, caption: "Clicks and creaks from a diving whale", speciesCommon: "Sperm Whale", audioUrl: "/v1/audio/watkins-0007" },
    { clipId: "watkins-0131", score: 0.70155, caption: "Echolocation clicks over vessel noise", speciesCommon: "Harbor Porpoise", audioUrl: "/v1/audio/watkins-0131" },
    { clipId: "xc-88", score: 0.41002, caption: "The sound of a Wood Thrush", speciesCommon: "Wood Thrush", audioUrl: "/v1/audio/xc-88" },
    { clipId: "xc-12", score: 0.40999, caption: "The sound of an Eastern Whipbird", speciesCommon: null, audioUrl: "/v1/audio/xc-12" },
  ];
}

export function okJson(body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status: 200,
    headers: { "Content-Type": "application/json" },
  });
}

export function errorJson(status: number, message: string): Response {
  return new Response(JSON.stringify({ error: message }), { status });
}

export interface FetchCall {
  url: string;
  init?: RequestInit;
}

/**
 * Install a scripted global fetch. Each handler consumes one call; the last
 * handler repeats. Returns the recorded calls.
 */
export function installFetch(
  handlers: Array<(call: FetchCall) => Response | Promise<Response>>,
): FetchCall[] {
  const calls: FetchCall[] = [];
  globalThis.fetch = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const call = { url: String(input), init };
    calls.push(call);
    const handler = handlers[Math.min(calls.length - 1, handlers.length - 1)];
    const signal = init?.signal;
    const result = await handler(call);
    if (signal?.aborted) {
      throw Object.assign(new Error("aborted"), { name: "AbortError" });
    }
    return result;
  }) as typeof fetch;
  return calls;
}
