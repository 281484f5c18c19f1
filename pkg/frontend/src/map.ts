/**
 * Thin DOM layer: slippy tiles from a configurable template plus
 * absolutely-positioned cluster badges. All geometry comes from
 * mercator.ts; all data comes from the cluster layer controller.
 */

import type { ClusterMarker } from "./clusters.js";
import { visibleTiles, type Viewport } from "./mercator.js";

export class MapView {
  private tileLayer: HTMLDivElement;
  private markerLayer: HTMLDivElement;

  constructor(
    private readonly root: HTMLElement,
    private readonly tileTemplate: string,
    private readonly onClickSingleton: (cameraId: string) => void,
  ) {
    this.root.style.position = "relative";
    this.root.style.overflow = "hidden";
    this.tileLayer = document.createElement("div");
    this.markerLayer = document.createElement("div");
    for (const layer of [this.tileLayer, this.markerLayer]) {
      layer.style.position = "absolute";
      layer.style.inset = "0";
      this.root.appendChild(layer);
    }
  }

  renderTiles(viewport: Viewport): void {
    this.tileLayer.replaceChildren();
    for (const tile of visibleTiles(viewport)) {
      const img = document.createElement("img");
      img.src = this.tileTemplate
        .replace("{z}", String(tile.z))
        .replace("{x}", String(tile.x))
        .replace("{y}", String(tile.y));
      img.width = 256;
      img.height = 256;
      img.style.position = "absolute";
      img.style.left = `${tile.left}px`;
      img.style.top = `${tile.top}px`;
      img.alt = "";
      img.draggable = false;
      this.tileLayer.appendChild(img);
    }
  }

  renderMarkers(markers: ClusterMarker[]): void {
    this.markerLayer.replaceChildren();
    for (const marker of markers) {
      const el = document.createElement("div");
      el.className = marker.singleton ? "marker single" : "marker cluster";
      el.textContent = marker.singleton ? "" : String(marker.cluster.count);
      el.style.position = "absolute";
      el.style.left = `${marker.x - 14}px`;
      el.style.top = `${marker.y - 14}px`;
      el.title = marker.singleton
        ? marker.cluster.representative_id
        : `${marker.cluster.count} cameras`;
      if (marker.singleton) {
        el.addEventListener("click", () => this.onClickSingleton(marker.cluster.representative_id));
      }
      this.markerLayer.appendChild(el);
    }
  }
}
