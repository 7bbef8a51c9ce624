/**
 * Bootstrap: read the API base URL (?api=... or same origin), grab the page
 * elements, and mount the app.
 */

import { EcholexApi } from "./api.js";
import { AppElements, mountApp } from "./app.js";

function grab<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
}

const baseUrl = new URLSearchParams(window.location.search).get("api") ?? "";

const elements: AppElements = {
  form: grab<HTMLFormElement>("search-form"),
  queryInput: grab<HTMLInputElement>("query"),
  kInput: grab<HTMLInputElement>("k"),
  submitButton: grab<HTMLButtonElement>("submit"),
  errorBox: grab("error"),
  resultsBox: grab("results"),
  historyBox: grab("history"),
  labelForm: grab<HTMLFormElement>("label-form"),
  labelInput: grab<HTMLInputElement>("labels"),
  labelPanel: grab("label-panel"),
};

mountApp(new EcholexApi(baseUrl), elements);
