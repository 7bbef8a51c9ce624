/**
 * HTML-string renderers. Kept free of document/global state so they can be
 * unit-tested without a DOM; app.ts assigns the output to innerHTML and
 * wires events by delegation.
 */

import { LabelScore, SearchResult } from "./api.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

/**
 * Ranked result rows, strictly in API order: rank, score to three decimals,
 * clickable species and caption (refinement), and an <audio> control
 * streaming the clip.
 */
export function renderResults(results: SearchResult[],
                              audioUrl: (r: SearchResult) => string): string {
  if (results.length === 0) {
    return '<p class="empty">No results yet. Try a query like "whale clicks".</p>';
  }
  const rows = results.map((result, i) => {
    const species = result.speciesCommon
      ? `<button class="refine species" data-index="${i}" ` +
        `data-fragment="${escapeHtml(result.speciesCommon)}">` +
        `${escapeHtml(result.speciesCommon)}</button>`
      : '<span class="species none">—</span>';
    return `<tr data-clip-id="${escapeHtml(result.clipId)}">` +
      `<td class="rank">${i + 1}</td>` +
      `<td class="score">${result.score.toFixed(3)}</td>` +
      `<td class="caption"><button class="refine caption" data-index="${i}" ` +
      `data-fragment="${escapeHtml(result.caption)}">` +
      `${escapeHtml(result.caption)}</button></td>` +
      `<td>${species}</td>` +
      `<td class="play"><audio controls preload="none" ` +
      `src="${escapeHtml(audioUrl(result))}"></audio></td>` +
      `<td><button class="label-target" data-clip-id="` +
      `${escapeHtml(result.clipId)}">labels</button></td>` +
      `</tr>`;
  });
  return (
    "<table><thead><tr><th>#</th><th>score</th><th>caption</th>" +
    "<th>species</th><th>play</th><th></th></tr></thead>" +
    `<tbody>${rows.join("")}</tbody></table>`
  );
}

export function renderError(message: string | null): string {
  if (!message) return "";
  return `<div class="banner error" role="alert">${escapeHtml(message)}</div>`;
}

export function renderHistory(history: string[]): string {
  if (history.length === 0) return "";
  const items = history
    .map((q) => `<li><button class="rerun" data-query="${escapeHtml(q)}">` +
      `${escapeHtml(q)}</button></li>`)
    .join("");
  return `<details open><summary>history (${history.length})</summary>` +
    `<ol class="history">${items}</ol></details>`;
}

/** Per-label score bars for the zero-shot panel; the argmax row is marked. */
export function renderLabelPanel(clipId: string, scores: LabelScore[],
                                 argmaxLabel: string): string {
  const rows = scores.map((entry) => {
    // cosine in [-1, 1] -> bar width in [0, 100]
    const width = Math.round(((entry.score + 1) / 2) * 100);
    const best = entry.label === argmaxLabel ? " best" : "";
    return `<div class="label-row${best}">` +
      `<span class="label-name">${escapeHtml(entry.label)}</span>` +
      `<span class="bar" style="width:${width}%"></span>` +
      `<span class="label-score">${entry.score.toFixed(3)}</span>` +
      `</div>`;
  });
  return `<h3>zero-shot labels for ${escapeHtml(clipId)}</h3>` + rows.join("");
}
