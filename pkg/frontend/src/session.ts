/**
 * Query-session state machine.
 *
 * Holds the current query, k, the result list (always mirroring the last
 * *successful* search response), an append-only history of prior queries,
 * and the in-flight request bookkeeping that makes rendering
 * last-write-wins: a newer submission aborts the previous fetch, and a
 * response is dropped unless it carries the latest request token.
 */

import { EcholexApi, SearchResult } from "./api.js";

export interface SessionState {
  query: string;
  k: number;
  results: SearchResult[];
  history: string[];
  error: string | null;
  searching: boolean;
}

export type Listener = (state: SessionState) => void;

export class QuerySession {
  private state: SessionState = {
    query: "",
    k: 10,
    results: [],
    history: [],
    error: null,
    searching: false,
  };
  private listeners: Listener[] = [];
  private requestToken = 0;
  private controller: AbortController | null = null;

  constructor(private api: EcholexApi) {}

  snapshot(): SessionState {
    return {
      ...this.state,
      results: [...this.state.results],
      history: [...this.state.history],
    };
  }

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    const snap = this.snapshot();
    for (const listener of this.listeners) listener(snap);
  }

  setQuery(text: string): void {
    this.state.query = text;
    this.emit();
  }

  setK(k: number): void {
    if (Number.isInteger(k) && k >= 1) {
      this.state.k = k;
      this.emit();
    }
  }

  /** Empty or whitespace-only queries cannot be submitted. */
  canSubmit(): boolean {
    return this.state.query.trim().length > 0;
  }

  /**
   * Run the current query. Prior results stay on screen until a newer
   * response succeeds; failures only raise the error banner. Stale
   * responses (older token, or aborted) are dropped entirely.
   */
  async submit(): Promise<void> {
    if (!this.canSubmit()) return;
    const text = this.state.query.trim();
    const token = ++this.requestToken;

    this.controller?.abort();
    this.controller = new AbortController();
    this.state.searching = true;
    this.state.error = null;
    this.emit();

    try {
      const response = await this.api.search(text, this.state.k,
        this.controller.signal);
      if (token !== this.requestToken) return; // a newer submission won
      this.state.results = response.results;
      this.state.history = [...this.state.history, text];
      this.state.error = null;
    } catch (err) {
      if (token !== this.requestToken) return;
      if ((err as Error).name === "AbortError") return;
      this.state.error = err instanceof Error ? err.message : String(err);
      // results deliberately untouched: never blank on failure
    } finally {
      if (token === this.requestToken) {
        this.state.searching = false;
        this.emit();
      }
    }
  }

  /**
   * One-click refinement: pull a result's species (or caption) into the
   * query box. The prior query is recorded in history (unless it is already
   * the latest entry); the user still presses search.
   */
  refineFrom(result: SearchResult, fragment?: string): void {
    const text = fragment ?? result.speciesCommon ?? result.caption;
    const prior = this.state.query.trim();
    if (prior && this.state.history[this.state.history.length - 1] !== prior) {
      this.state.history = [...this.state.history, prior];
    }
    this.state.query = text;
    this.emit();
  }
}
