/**
 * DOM wiring: binds the search form, result-row refinement clicks, history
 * re-runs, and the zero-shot label panel to a QuerySession over the API.
 */

import { EcholexApi, SearchResult } from "./api.js";
import { renderError, renderHistory, renderLabelPanel,
         renderResults } from "./render.js";
import { QuerySession } from "./session.js";

export interface AppElements {
  form: HTMLFormElement;
  queryInput: HTMLInputElement;
  kInput: HTMLInputElement;
  submitButton: HTMLButtonElement;
  errorBox: HTMLElement;
  resultsBox: HTMLElement;
  historyBox: HTMLElement;
  labelForm: HTMLFormElement;
  labelInput: HTMLInputElement;
  labelPanel: HTMLElement;
}

export function mountApp(api: EcholexApi, el: AppElements): QuerySession {
  const session = new QuerySession(api);
  let lastResults: SearchResult[] = [];
  let labelClipId: string | null = null;

  session.subscribe((state) => {
    lastResults = state.results;
    el.queryInput.value = state.query;
    el.submitButton.disabled = !session.canSubmit() || state.searching;
    el.errorBox.innerHTML = renderError(state.error);
    el.resultsBox.innerHTML = renderResults(state.results,
      (r) => api.audioUrl(r));
    el.historyBox.innerHTML = renderHistory(state.history);
  });

  el.queryInput.addEventListener("input", () => {
    session.setQuery(el.queryInput.value);
  });

  el.form.addEventListener("submit", (event) => {
    event.preventDefault();
    const k = parseInt(el.kInput.value, 10);
    if (!Number.isNaN(k)) session.setK(k);
    void session.submit();
  });

  el.resultsBox.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    if (target.matches("button.refine")) {
      const index = Number(target.dataset.index);
      const result = lastResults[index];
      if (result) {
        session.refineFrom(result, target.dataset.fragment);
        el.queryInput.focus();
      }
    } else if (target.matches("button.label-target")) {
      labelClipId = target.dataset.clipId ?? null;
      el.labelPanel.innerHTML =
        `<p>clip ${labelClipId ?? "?"} selected; enter labels above.</p>`;
    }
  });

  el.historyBox.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    if (target.matches("button.rerun") && target.dataset.query) {
      session.setQuery(target.dataset.query);
      void session.submit();
    }
  });

  el.labelForm.addEventListener("submit", async (event) => {
    event.preventDefault();
    const labels = el.labelInput.value
      .split(",")
      .map((s) => s.trim())
      .filter((s) => s.length > 0);
    if (!labelClipId || labels.length === 0) {
      el.labelPanel.innerHTML = renderError(
        "pick a clip via its “labels” button and enter " +
        "comma-separated label prompts");
      return;
    }
    try {
      const response = await api.classify(labelClipId, labels);
      el.labelPanel.innerHTML = renderLabelPanel(
        labelClipId, response.scores, response.argmaxLabel);
    } catch (err) {
      el.labelPanel.innerHTML = renderError(
        err instanceof Error ? err.message : String(err));
    }
  });

  return session;
}
