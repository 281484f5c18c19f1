/** Web-Mercator math shared by the tile layer and marker placement. */

import type { Bbox } from "./api.js";

export const MAX_LAT = 85.05112878;

export interface Viewport {
  centerLat: number;
  centerLon: number;
  zoom: number; // integer tile zoom
  widthPx: number;
  heightPx: number;
}

const TILE = 256;

export function lonToWorldX(lon: number, zoom: number): number {
  return ((lon + 180) / 360) * TILE * Math.pow(2, zoom);
}

export function latToWorldY(lat: number, zoom: number): number {
  const clamped = Math.max(-MAX_LAT, Math.min(MAX_LAT, lat));
  const rad = (clamped * Math.PI) / 180;
  const merc = (1 - Math.log(Math.tan(rad) + 1 / Math.cos(rad)) / Math.PI) / 2;
  return merc * TILE * Math.pow(2, zoom);
}

export function worldXToLon(x: number, zoom: number): number {
  return (x / (TILE * Math.pow(2, zoom))) * 360 - 180;
}

export function worldYToLat(y: number, zoom: number): number {
  const n = Math.PI - (2 * Math.PI * y) / (TILE * Math.pow(2, zoom));
  return (180 / Math.PI) * Math.atan(Math.sinh(n));
}

/** Geographic bounds of what the viewport shows. */
export function viewportBbox(v: Viewport): Bbox {
  const cx = lonToWorldX(v.centerLon, v.zoom);
  const cy = latToWorldY(v.centerLat, v.zoom);
  const minLon = worldXToLon(cx - v.widthPx / 2, v.zoom);
  const maxLon = worldXToLon(cx + v.widthPx / 2, v.zoom);
  const maxLat = worldYToLat(cy - v.heightPx / 2, v.zoom);
  const minLat = worldYToLat(cy + v.heightPx / 2, v.zoom);
  return {
    minLon: Math.max(-180, minLon),
    minLat: Math.max(-90, minLat),
    maxLon: Math.min(180, maxLon),
    maxLat: Math.min(90, maxLat),
  };
}

/** Pixel offset of a point relative to the viewport's top-left corner. */
export function toScreen(v: Viewport, lat: number, lon: number): { x: number; y: number } {
  const cx = lonToWorldX(v.centerLon, v.zoom);
  const cy = latToWorldY(v.centerLat, v.zoom);
  return {
    x: lonToWorldX(lon, v.zoom) - cx + v.widthPx / 2,
    y: latToWorldY(lat, v.zoom) - cy + v.heightPx / 2,
  };
}

export interface TilePlacement {
  z: number;
  x: number;
  y: number;
  left: number;
  top: number;
}

/** Tiles needed to paint the viewport, with their screen offsets. */
export function visibleTiles(v: Viewport): TilePlacement[] {
  const n = Math.pow(2, v.zoom);
  const cx = lonToWorldX(v.centerLon, v.zoom);
  const cy = latToWorldY(v.centerLat, v.zoom);
  const left = cx - v.widthPx / 2;
  const top = cy - v.heightPx / 2;
  const x0 = Math.floor(left / TILE);
  const y0 = Math.floor(top / TILE);
  const x1 = Math.floor((left + v.widthPx) / TILE);
  const y1 = Math.floor((top + v.heightPx) / TILE);
  const tiles: TilePlacement[] = [];
  for (let ty = Math.max(0, y0); ty <= Math.min(n - 1, y1); ty++) {
    for (let tx = x0; tx <= x1; tx++) {
      const wrapped = ((tx % n) + n) % n;
      tiles.push({ z: v.zoom, x: wrapped, y: ty, left: tx * TILE - left, top: ty * TILE - top });
    }
  }
  return tiles;
}
