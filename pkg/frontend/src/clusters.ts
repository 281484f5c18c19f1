/**
 * Cluster layer controller: fetches marker clusters for the current
 * viewport, debounced, with at most one request in flight (latest wins).
 * Fetch failures keep the previous layer and surface a banner message.
 */

import type { ApiClient, ClusterJson } from "./api.js";
import { toScreen, viewportBbox, type Viewport } from "./mercator.js";

export interface ClusterMarker {
  cluster: ClusterJson;
  x: number;
  y: number;
  singleton: boolean;
}

export interface ClusterLayerEvents {
  onMarkers(markers: ClusterMarker[], totalCameras: number): void;
  onError(message: string): void;
}

type Scheduler = (fn: () => void, ms: number) => unknown;
type Canceler = (handle: unknown) => void;

export class ClusterLayer {
  private debounceHandle: unknown = null;
  private generation = 0;
  private applied = 0;
  private inflight: AbortController | null = null;
  markers: ClusterMarker[] = [];

  constructor(
    private readonly api: ApiClient,
    private readonly events: ClusterLayerEvents,
    private readonly debounceMs = 250,
    private readonly schedule: Scheduler = (fn, ms) => setTimeout(fn, ms),
    private readonly cancel: Canceler = (h) => clearTimeout(h as number),
  ) {}

  /** Call on every pan/zoom; the actual fetch is debounced. */
  viewportChanged(viewport: Viewport): void {
    if (this.debounceHandle !== null) {
      this.cancel(this.debounceHandle);
    }
    this.debounceHandle = this.schedule(() => {
      this.debounceHandle = null;
      void this.refresh(viewport);
    }, this.debounceMs);
  }

  /** Fetch immediately (initial paint). At most one request stays in
   * flight: issuing a new one aborts its predecessor, and any stale
   * response that still lands is dropped. */
  async refresh(viewport: Viewport): Promise<void> {
    const gen = ++this.generation;
    this.inflight?.abort();
    const controller = typeof AbortController !== "undefined" ? new AbortController() : null;
    this.inflight = controller;
    try {
      const clusters = await this.api.getClusters(
        viewportBbox(viewport),
        viewport.zoom,
        controller?.signal,
      );
      if (gen <= this.applied) {
        return; // a newer response already painted
      }
      this.applied = gen;
      this.markers = clusters.map((c) => ({
        cluster: c,
        ...toScreen(viewport, c.centroid.latitude, c.centroid.longitude),
        singleton: c.count === 1,
      }));
      this.events.onMarkers(
        this.markers,
        clusters.reduce((sum, c) => sum + c.count, 0),
      );
    } catch (err) {
      if (err instanceof Error && err.name === "AbortError") {
        return; // superseded by a newer viewport, not a failure
      }
      this.events.onError(err instanceof Error ? err.message : String(err));
    }
  }
}
