/**
 * Portal view state: viewport, filters, selection, and the job draft.
 *
 * The whole state round-trips through the URL query string so a view can
 * be shared as a link and reproduced exactly.
 */

import type { Viewport } from "./mercator.js";

export interface Filters {
  country?: string;
  state?: string;
  city?: string;
  disposition?: string;
}

export interface JobDraftState {
  camera_ids: string[];
  fps: number;
  duration: number;
  analyzer: string;
}

export interface ViewState {
  viewport: Viewport;
  filters: Filters;
  selectedCamera?: string;
  draft: JobDraftState;
}

export const DEFAULT_STATE: ViewState = {
  viewport: { centerLat: 20, centerLon: 0, zoom: 2, widthPx: 960, heightPx: 600 },
  filters: {},
  draft: { camera_ids: [], fps: 1, duration: 60, analyzer: "motion_features" },
};

/** Reasons a draft cannot be submitted; empty list means submittable. */
export function draftProblems(draft: JobDraftState): string[] {
  const problems: string[] = [];
  if (draft.camera_ids.length === 0) problems.push("select at least one camera");
  if (!(draft.fps > 0)) problems.push("fps must be positive");
  if (!(draft.duration > 0)) problems.push("duration must be positive");
  if (!draft.analyzer) problems.push("choose an analyzer");
  return problems;
}

export function draftSubmittable(draft: JobDraftState): boolean {
  return draftProblems(draft).length === 0;
}

const FILTER_KEYS: (keyof Filters)[] = ["country", "state", "city", "disposition"];

export function stateToQuery(s: ViewState): string {
  const params = new URLSearchParams();
  params.set("lat", s.viewport.centerLat.toFixed(6));
  params.set("lon", s.viewport.centerLon.toFixed(6));
  params.set("z", String(s.viewport.zoom));
  for (const key of FILTER_KEYS) {
    const value = s.filters[key];
    if (value) params.set(key, value);
  }
  if (s.selectedCamera) params.set("cam", s.selectedCamera);
  if (s.draft.camera_ids.length > 0) params.set("job_cams", s.draft.camera_ids.join(","));
  params.set("job_fps", String(s.draft.fps));
  params.set("job_dur", String(s.draft.duration));
  params.set("job_an", s.draft.analyzer);
  return params.toString();
}

export function stateFromQuery(query: string, base: ViewState = DEFAULT_STATE): ViewState {
  const params = new URLSearchParams(query);
  const filters: Filters = {};
  for (const key of FILTER_KEYS) {
    const value = params.get(key);
    if (value) filters[key] = value;
  }
  const num = (name: string, fallback: number) => {
    const raw = params.get(name);
    if (raw === null) return fallback;
    const parsed = Number(raw);
    return Number.isFinite(parsed) ? parsed : fallback;
  };
  const cams = params.get("job_cams");
  return {
    viewport: {
      centerLat: clamp(num("lat", base.viewport.centerLat), -85, 85),
      centerLon: clamp(num("lon", base.viewport.centerLon), -180, 180),
      zoom: clamp(Math.round(num("z", base.viewport.zoom)), 0, 20),
      widthPx: base.viewport.widthPx,
      heightPx: base.viewport.heightPx,
    },
    filters,
    selectedCamera: params.get("cam") ?? undefined,
    draft: {
      camera_ids: cams ? cams.split(",").filter(Boolean) : [],
      fps: num("job_fps", base.draft.fps),
      duration: num("job_dur", base.draft.duration),
      analyzer: params.get("job_an") ?? base.draft.analyzer,
    },
  };
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.max(lo, Math.min(hi, v));
}
