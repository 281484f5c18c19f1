/** Browser entry point: wires the map, filters, job form, and chart. */

import { ApiClient } from "./api.js";
import { buildChartModel, chartToSvg } from "./chart.js";
import { ClusterLayer } from "./clusters.js";
import { JobPanel } from "./jobs.js";
import type { Viewport } from "./mercator.js";
import { DEFAULT_STATE, draftSubmittable, stateFromQuery, stateToQuery, type ViewState } from "./state.js";
import { MapView } from "./map.js";

declare global {
  interface Window {
    CAMNET_API_BASE?: string;
    CAMNET_TILE_TEMPLATE?: string;
  }
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function main(): void {
  const api = new ApiClient(window.CAMNET_API_BASE ?? "");
  const tileTemplate =
    window.CAMNET_TILE_TEMPLATE ?? "https://tile.openstreetmap.org/{z}/{x}/{y}.png";

  let state: ViewState = stateFromQuery(location.search.slice(1), DEFAULT_STATE);
  const mapRoot = el<HTMLDivElement>("map");
  state.viewport.widthPx = mapRoot.clientWidth || state.viewport.widthPx;
  state.viewport.heightPx = mapRoot.clientHeight || state.viewport.heightPx;

  const banner = el<HTMLDivElement>("banner");
  const showBanner = (message: string) => {
    banner.textContent = message;
    banner.style.display = message ? "block" : "none";
  };

  const popup = el<HTMLDivElement>("popup");
  const openSnapshot = (cameraId: string) => {
    state = { ...state, selectedCamera: cameraId };
    syncUrl();
    popup.replaceChildren();
    const title = document.createElement("div");
    title.textContent = cameraId;
    const img = document.createElement("img");
    img.src = api.snapshotUrl(cameraId) + `?t=${Date.now()}`;
    img.alt = `snapshot of ${cameraId}`;
    img.onerror = () => showBanner(`snapshot failed for ${cameraId}`);
    const pick = document.createElement("button");
    pick.textContent = "add to job";
    pick.onclick = () => {
      if (!state.draft.camera_ids.includes(cameraId)) {
        state.draft.camera_ids.push(cameraId);
        renderDraft();
        syncUrl();
      }
    };
    const close = document.createElement("button");
    close.textContent = "close";
    close.onclick = () => {
      popup.style.display = "none";
      state = { ...state, selectedCamera: undefined };
      syncUrl();
    };
    popup.append(title, img, pick, close);
    popup.style.display = "block";
  };

  const map = new MapView(mapRoot, tileTemplate, openSnapshot);
  const layer = new ClusterLayer(api, {
    onMarkers: (markers, total) => {
      map.renderMarkers(markers);
      el<HTMLSpanElement>("camera-count").textContent = String(total);
      showBanner("");
    },
    onError: (message) => showBanner(`cluster fetch failed: ${message} (showing last layer)`),
  });

  const refreshMap = () => {
    map.renderTiles(state.viewport);
    layer.viewportChanged(state.viewport);
    syncUrl();
  };

  const syncUrl = () => {
    history.replaceState(null, "", `?${stateToQuery(state)}`);
  };

  const move = (dLatFrac: number, dLonFrac: number) => {
    const span = 360 / Math.pow(2, state.viewport.zoom);
    state.viewport.centerLat = Math.max(-85, Math.min(85, state.viewport.centerLat + dLatFrac * span * 0.3));
    state.viewport.centerLon = state.viewport.centerLon + dLonFrac * span * 0.5;
    refreshMap();
  };
  el<HTMLButtonElement>("pan-n").onclick = () => move(1, 0);
  el<HTMLButtonElement>("pan-s").onclick = () => move(-1, 0);
  el<HTMLButtonElement>("pan-w").onclick = () => move(0, -1);
  el<HTMLButtonElement>("pan-e").onclick = () => move(0, 1);
  el<HTMLButtonElement>("zoom-in").onclick = () => {
    state.viewport.zoom = Math.min(20, state.viewport.zoom + 1);
    refreshMap();
  };
  el<HTMLButtonElement>("zoom-out").onclick = () => {
    state.viewport.zoom = Math.max(0, state.viewport.zoom - 1);
    refreshMap();
  };

  const filterForm = el<HTMLFormElement>("filters");
  filterForm.onsubmit = (event) => {
    event.preventDefault();
    const data = new FormData(filterForm);
    state.filters = {};
    for (const key of ["country", "state", "city", "disposition"] as const) {
      const value = String(data.get(key) ?? "").trim();
      if (value) state.filters[key] = value;
    }
    void api
      .listCameras({ ...state.filters, limit: 1 })
      .then((page) => showBanner(`${page.total} cameras match the filters`))
      .catch((err) => showBanner(String(err)));
    syncUrl();
  };

  const renderDraft = () => {
    el<HTMLSpanElement>("draft-cams").textContent =
      state.draft.camera_ids.join(", ") || "none selected";
    el<HTMLButtonElement>("job-submit").disabled = !draftSubmittable(state.draft);
  };

  const statusBox = el<HTMLDivElement>("job-status");
  const chartBox = el<HTMLDivElement>("chart");
  const panel = new JobPanel(api, {
    onStatus: (job) => {
      const streams = Object.entries(job.streams)
        .map(([cam, s]) => `${cam}: ${s.state} (${s.frames} frames, ${s.errors} errors)`)
        .join("; ");
      statusBox.textContent = `${job.id} - ${job.state}${streams ? " | " + streams : ""}`;
    },
    onFinished: (_job, results) => {
      chartBox.innerHTML = chartToSvg(buildChartModel(results));
    },
    onError: (message) => showBanner(message),
  });

  const jobForm = el<HTMLFormElement>("job-form");
  jobForm.onsubmit = (event) => {
    event.preventDefault();
    const data = new FormData(jobForm);
    state.draft.fps = Number(data.get("fps"));
    state.draft.duration = Number(data.get("duration"));
    state.draft.analyzer = String(data.get("analyzer"));
    syncUrl();
    if (!draftSubmittable(state.draft)) {
      showBanner("job draft incomplete: select cameras and set positive fps/duration");
      return;
    }
    void panel.submit(state.draft);
  };
  el<HTMLButtonElement>("job-cancel").onclick = () => void panel.cancel();
  el<HTMLButtonElement>("draft-clear").onclick = () => {
    state.draft.camera_ids = [];
    renderDraft();
    syncUrl();
  };

  renderDraft();
  refreshMap();
  void layer.refresh(state.viewport);
}

main();
