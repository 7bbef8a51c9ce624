import { describe, expect, it } from "vitest";

import { ApiError, EcholexApi } from "../src/api.js";
import { errorJson, installFetch, okJson, seededResults } from "./helpers.js";

describe("EcholexApi", () => {
  it("posts search queries to /v1/search with text and k", async () => {
    const calls = installFetch([() => okJson({ results: seededResults() })]);
    const api = new EcholexApi("http://localhost:8710");
    const response = await api.search("whale clicks", 5);

    expect(calls[0].url).toBe("http://localhost:8710/v1/search");
    expect(calls[0].init?.method).toBe("POST");
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({
      text: "whale clicks",
      k: 5,
    });
    expect(response.results).toHaveLength(5);
    expect(response.results[0].clipId).toBe("watkins-0042");
  });

  it("surfaces server error bodies as ApiError", async () => {
    installFetch([() => errorJson(503, "index not loaded")]);
    const api = new EcholexApi();
    await expect(api.search("x", 1)).rejects.toThrowError(ApiError);
    await expect(api.search("x", 1)).rejects.toThrow("index not loaded");
  });

  it("posts classify requests with clipId and labels", async () => {
    const calls = installFetch([
      () =>
        okJson({
          scores: [
            { label: "whale", score: 0.8 },
            { label: "bird", score: -0.1 },
          ],
          argmaxLabel: "whale",
        }),
    ]);
    const api = new EcholexApi();
    const response = await api.classify("watkins-0042", ["whale", "bird"]);
    expect(calls[0].url).toBe("/v1/classify");
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({
      clipId: "watkins-0042",
      labels: ["whale", "bird"],
    });
    expect(response.argmaxLabel).toBe("whale");
  });

  it("builds audio stream URLs from the result's audioUrl", () => {
    const api = new EcholexApi("http://host:1");
    expect(api.audioUrl(seededResults()[0])).toBe(
      "http://host:1/v1/audio/watkins-0042",
    );
  });
});
