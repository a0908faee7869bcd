/** Pure view-model builders and HTML renderers.
 *
 * Every numeric value in a view model is copied verbatim from a server
 * payload (positive sign -> red, negative -> blue, opacity = the server's
 * normalized intensity). The functions are pure, so identical payloads
 * always produce identical markup. */

import type { DiffPayload, Highlight, WhatIfResponse } from "./api.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

// ---------------------------------------------------------------------------
// word heatmap
// ---------------------------------------------------------------------------

export interface HeatmapSpan {
  token: string;
  wordScore: number;
  intensity: number;
  sign: -1 | 0 | 1;
  color: "red" | "blue" | "none";
  opacity: number;
}

export function heatmapModel(tokens: Highlight[]): HeatmapSpan[] {
  return tokens.map((h) => ({
    token: h.token,
    wordScore: h.word_score,
    intensity: h.intensity,
    sign: h.sign,
    color: h.sign > 0 ? "red" : h.sign < 0 ? "blue" : "none",
    opacity: h.intensity,
  }));
}

const RED = "214, 39, 40";
const BLUE = "31, 119, 180";

export function heatmapHtml(spans: HeatmapSpan[]): string {
  if (spans.length === 0) {
    return '<p class="empty-state">no tokens to show for this document</p>';
  }
  const parts = spans.map((s) => {
    const style =
      s.color === "none" ? "" : `background-color: rgba(${s.color === "red" ? RED : BLUE}, ${s.opacity});`;
    return `<span class="tok" title="${escapeHtml(String(s.wordScore))}" style="${style}">${escapeHtml(s.token)}</span>`;
  });
  return `<p class="heatmap">${parts.join(" ")}</p>`;
}

// ---------------------------------------------------------------------------
// what-if probability bars
// ---------------------------------------------------------------------------

export interface ProbBar {
  classIndex: number;
  before: number;
  after: number;
}

export function whatifModel(resp: Pick<WhatIfResponse, "probs_before" | "probs_after">): ProbBar[] {
  return resp.probs_before.map((before, i) => ({
    classIndex: i,
    before,
    after: resp.probs_after[i],
  }));
}

export function whatifHtml(bars: ProbBar[], predictedBefore: number, predictedAfter: number): string {
  const rows = bars.map((b) => {
    const beforePct = b.before * 100;
    const afterPct = b.after * 100;
    return (
      `<div class="prob-row" data-class="${b.classIndex}">` +
      `<span class="prob-label">class ${b.classIndex}</span>` +
      `<div class="bar before" style="width: ${beforePct}%" title="${escapeHtml(String(b.before))}"></div>` +
      `<div class="bar after" style="width: ${afterPct}%" title="${escapeHtml(String(b.after))}"></div>` +
      `</div>`
    );
  });
  return (
    `<div class="whatif-bars" data-pred-before="${predictedBefore}" data-pred-after="${predictedAfter}">` +
    rows.join("") +
    `</div>`
  );
}

// ---------------------------------------------------------------------------
// class-difference chart
// ---------------------------------------------------------------------------

export interface DiffBar {
  featureIndex: number;
  value: number;
  magnitude: number;
}

/** Bars sorted by |difference| descending; ties keep the lower index first. */
export function diffModel(values: number[]): DiffBar[] {
  const bars = values.map((value, featureIndex) => ({
    featureIndex,
    value,
    magnitude: Math.abs(value),
  }));
  return bars.sort((a, b) => b.magnitude - a.magnitude || a.featureIndex - b.featureIndex);
}

export function diffAllZero(payload: Pick<DiffPayload, "column_diffs" | "filter_diffs">): boolean {
  return payload.column_diffs.every((v) => v === 0) && payload.filter_diffs.every((v) => v === 0);
}

export function diffHtml(bars: DiffBar[], kind: "column" | "filter", selected: number[]): string {
  if (bars.every((b) => b.value === 0)) {
    return `<p class="zero-note">no attribution difference between the chosen classes (identical classes give a zero chart)</p>`;
  }
  const peak = bars[0].magnitude;
  const rows = bars.map((b) => {
    const width = peak > 0 ? (b.magnitude / peak) * 100 : 0;
    const side = b.value >= 0 ? "pos" : "neg";
    const marked = selected.includes(b.featureIndex) ? " selected" : "";
    return (
      `<div class="diff-row${marked}" data-kind="${kind}" data-feature="${b.featureIndex}">` +
      `<span class="diff-label">${kind} ${b.featureIndex}</span>` +
      `<div class="bar ${side}" style="width: ${width}%" title="${escapeHtml(String(b.value))}"></div>` +
      `</div>`
    );
  });
  return `<div class="diff-chart">${rows.join("")}</div>`;
}

// ---------------------------------------------------------------------------
// document list
// ---------------------------------------------------------------------------

export interface DocRow {
  docId: number;
  snippet: string;
  trueLabel: number;
  predictedLabel: number;
}

export function docListHtml(rows: DocRow[], selected: number | null): string {
  if (rows.length === 0) return '<p class="empty-state">no documents</p>';
  const items = rows.map((r) => {
    const cls = r.docId === selected ? "doc-row selected" : "doc-row";
    const badge = r.trueLabel === r.predictedLabel ? "ok" : "miss";
    return (
      `<li class="${cls}" data-doc="${r.docId}">` +
      `<span class="doc-id">#${r.docId}</span>` +
      `<span class="badge ${badge}">true ${r.trueLabel} / pred ${r.predictedLabel}</span>` +
      `<span class="snippet">${escapeHtml(r.snippet)}</span>` +
      `</li>`
    );
  });
  return `<ul class="doc-list">${items.join("")}</ul>`;
}
