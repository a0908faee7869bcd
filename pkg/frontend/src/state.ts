/** View state and its transitions. Pending what-if selections always clear
 * when the selected document changes, and cached payloads are dropped with
 * them; the view re-renders purely from server payloads. */

import type { AttributionPayload, DiffPayload, WhatIfResponse } from "./api.js";

export type Method = "lrp" | "sa";

export interface ViewState {
  selectedDoc: number | null;
  method: Method;
  targetClass: number;
  compareClass: number | null;
  pendingColumns: number[];
  pendingFilters: number[];
  lastAttribution: AttributionPayload | null;
  lastDiff: DiffPayload | null;
  lastWhatIf: WhatIfResponse | null;
}

export function initialState(): ViewState {
  return {
    selectedDoc: null,
    method: "lrp",
    targetClass: 0,
    compareClass: null,
    pendingColumns: [],
    pendingFilters: [],
    lastAttribution: null,
    lastDiff: null,
    lastWhatIf: null,
  };
}

export function selectDoc(state: ViewState, docId: number): ViewState {
  if (state.selectedDoc === docId) return state;
  return {
    ...state,
    selectedDoc: docId,
    pendingColumns: [],
    pendingFilters: [],
    lastAttribution: null,
    lastDiff: null,
    lastWhatIf: null,
  };
}

export function setMethod(state: ViewState, method: Method): ViewState {
  return { ...state, method, lastAttribution: null, lastDiff: null };
}

export function setTargetClass(state: ViewState, targetClass: number): ViewState {
  return { ...state, targetClass, lastAttribution: null, lastDiff: null };
}

export function setCompareClass(state: ViewState, compareClass: number | null): ViewState {
  return { ...state, compareClass, lastDiff: null };
}

function toggle(values: number[], value: number): number[] {
  return values.includes(value)
    ? values.filter((v) => v !== value)
    : [...values, value].sort((a, b) => a - b);
}

export function toggleColumn(state: ViewState, column: number): ViewState {
  return { ...state, pendingColumns: toggle(state.pendingColumns, column) };
}

export function toggleFilter(state: ViewState, filter: number): ViewState {
  return { ...state, pendingFilters: toggle(state.pendingFilters, filter) };
}

export function clearSelections(state: ViewState): ViewState {
  return { ...state, pendingColumns: [], pendingFilters: [], lastWhatIf: null };
}

export function applyAttribution(state: ViewState, payload: AttributionPayload): ViewState {
  return { ...state, lastAttribution: payload };
}

export function applyDiff(state: ViewState, payload: DiffPayload): ViewState {
  return { ...state, lastDiff: payload };
}

export function applyWhatIf(state: ViewState, payload: WhatIfResponse): ViewState {
  return { ...state, lastWhatIf: payload };
}
