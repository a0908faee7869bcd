/** DOM wiring: one event-driven page over the attribution service.
 * At most one what-if request is in flight per document; newer submissions
 * abort and supersede older ones. */

import { ApiClient, ApiError, loadConfig } from "./api.js";
import type { DocList } from "./api.js";
import {
  diffHtml,
  diffModel,
  docListHtml,
  heatmapHtml,
  heatmapModel,
  whatifHtml,
  whatifModel,
} from "./render.js";
import {
  applyAttribution,
  applyDiff,
  applyWhatIf,
  clearSelections,
  initialState,
  selectDoc,
  setCompareClass,
  setMethod,
  setTargetClass,
  toggleColumn,
  toggleFilter,
  ViewState,
} from "./state.js";

let state: ViewState = initialState();
let api: ApiClient;
let docList: DocList | null = null;
let numClasses = 2;
let whatIfSeq = 0;
let whatIfController: AbortController | null = null;

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

function setBanner(text: string, kind: "error" | "info" | "none"): void {
  const banner = el("banner");
  banner.textContent = text;
  banner.className = kind === "none" ? "banner hidden" : `banner ${kind}`;
}

function classOptions(selected: number, allowNone = false): string {
  const opts: string[] = [];
  if (allowNone) opts.push(`<option value="">(none)</option>`);
  for (let c = 0; c < numClasses; c += 1) {
    opts.push(`<option value="${c}" ${c === selected ? "selected" : ""}>class ${c}</option>`);
  }
  return opts.join("");
}

function renderControls(): void {
  (el("method-toggle") as HTMLSelectElement).value = state.method;
  el("target-class").innerHTML = classOptions(state.targetClass);
  const compare = el("compare-class") as HTMLSelectElement;
  compare.innerHTML = classOptions(state.compareClass ?? -1, true);
  compare.value = state.compareClass === null ? "" : String(state.compareClass);
}

function renderDocList(): void {
  if (!docList) return;
  el("docs-pane").innerHTML = docListHtml(
    docList.docs.map((d) => ({
      docId: d.doc_id,
      snippet: d.snippet,
      trueLabel: d.true_label,
      predictedLabel: d.predicted_label,
    })),
    state.selectedDoc,
  );
}

function renderHeatmap(): void {
  const pane = el("heatmap-pane");
  if (!state.lastAttribution) {
    pane.innerHTML = '<p class="empty-state">select a document</p>';
    return;
  }
  const payload = state.lastAttribution;
  pane.innerHTML =
    `<p class="meta">doc ${payload.doc_id} / ${payload.method} / class ${payload.class} ` +
    `/ logit ${payload.logit_value}</p>` +
    heatmapHtml(heatmapModel(payload.tokens));
}

function renderDiff(): void {
  const pane = el("diff-pane");
  if (!state.lastDiff) {
    pane.innerHTML =
      '<p class="empty-state">pick a comparison class to chart attribution differences</p>';
    return;
  }
  pane.innerHTML =
    `<h3>columns</h3>` +
    diffHtml(diffModel(state.lastDiff.column_diffs), "column", state.pendingColumns) +
    `<h3>filters</h3>` +
    diffHtml(diffModel(state.lastDiff.filter_diffs), "filter", state.pendingFilters);
}

function renderWhatIf(): void {
  el("selection-summary").textContent =
    `columns: [${state.pendingColumns.join(", ")}]  filters: [${state.pendingFilters.join(", ")}]`;
  const pane = el("whatif-pane");
  if (!state.lastWhatIf) {
    pane.innerHTML = '<p class="empty-state">submit a selection to compare probabilities</p>';
    return;
  }
  pane.innerHTML = whatifHtml(
    whatifModel(state.lastWhatIf),
    state.lastWhatIf.predicted_before,
    state.lastWhatIf.predicted_after,
  );
}

function renderAll(): void {
  renderControls();
  renderDocList();
  renderHeatmap();
  renderDiff();
  renderWhatIf();
}

async function refreshAttribution(): Promise<void> {
  if (state.selectedDoc === null) return;
  try {
    const payload = await api.attribution(state.selectedDoc, state.targetClass, state.method);
    state = applyAttribution(state, payload);
    setBanner("", "none");
  } catch (err) {
    setBanner(`attribution failed: ${(err as Error).message}`, "error");
  }
  renderHeatmap();
}

async function refreshDiff(): Promise<void> {
  if (state.selectedDoc === null || state.compareClass === null) {
    renderDiff();
    return;
  }
  try {
    const payload = await api.diff(
      state.selectedDoc, state.targetClass, state.compareClass, state.method);
    state = applyDiff(state, payload);
  } catch (err) {
    setBanner(`diff failed: ${(err as Error).message}`, "error");
  }
  renderDiff();
}

async function submitWhatIf(): Promise<void> {
  if (state.selectedDoc === null) return;
  whatIfSeq += 1;
  const seq = whatIfSeq;
  whatIfController?.abort();
  whatIfController = new AbortController();
  try {
    const resp = await api.whatIf(
      state.selectedDoc, state.pendingColumns, state.pendingFilters,
      whatIfController.signal);
    if (seq !== whatIfSeq) return; // superseded by a newer submission
    state = applyWhatIf(state, resp);
    setBanner("", "none");
    renderWhatIf();
  } catch (err) {
    if ((err as Error).name === "AbortError") return;
    if (err instanceof ApiError) {
      setBanner(`what-if rejected: ${err.message}`, "error");
    } else {
      setBanner("network failure; check the service and retry", "error");
    }
  }
}

function wireEvents(): void {
  el("docs-pane").addEventListener("click", (ev) => {
    const row = (ev.target as HTMLElement).closest<HTMLElement>(".doc-row");
    if (!row) return;
    state = selectDoc(state, Number(row.dataset.doc));
    renderAll();
    void refreshAttribution();
    void refreshDiff();
  });

  el("method-toggle").addEventListener("change", (ev) => {
    state = setMethod(state, (ev.target as HTMLSelectElement).value as "lrp" | "sa");
    void refreshAttribution();
    void refreshDiff();
  });

  el("target-class").addEventListener("change", (ev) => {
    state = setTargetClass(state, Number((ev.target as HTMLSelectElement).value));
    void refreshAttribution();
    void refreshDiff();
  });

  el("compare-class").addEventListener("change", (ev) => {
    const value = (ev.target as HTMLSelectElement).value;
    state = setCompareClass(state, value === "" ? null : Number(value));
    void refreshDiff();
  });

  el("diff-pane").addEventListener("click", (ev) => {
    const row = (ev.target as HTMLElement).closest<HTMLElement>(".diff-row");
    if (!row) return;
    const feature = Number(row.dataset.feature);
    state = row.dataset.kind === "column"
      ? toggleColumn(state, feature)
      : toggleFilter(state, feature);
    renderDiff();
    renderWhatIf();
  });

  el("whatif-submit").addEventListener("click", () => void submitWhatIf());
  el("whatif-clear").addEventListener("click", () => {
    state = clearSelections(state);
    renderDiff();
    renderWhatIf();
  });
}

async function boot(): Promise<void> {
  try {
    const config = await loadConfig();
    api = new ApiClient(config.apiBaseUrl);
    docList = await api.listDocs(1, 50);
    if (docList.docs.length > 0) {
      numClasses = docList.docs[0].probs.length;
    }
    wireEvents();
    renderAll();
    setBanner("", "none");
  } catch (err) {
    setBanner(`failed to reach the service: ${(err as Error).message}`, "error");
  }
}

void boot();
