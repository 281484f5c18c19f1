/**
 * Result time-series chart built as plain SVG: hourly activity bins per
 * camera, the shape used for day-scale "when is there motion" plots.
 * Pure data-in, geometry-out so tests can assert every plotted value
 * traces back to a REST response.
 */

import type { HourlyBin, JobResultsJson } from "./api.js";

export interface ChartSeries {
  cameraId: string;
  points: { x: number; y: number; hour: string; mean: number; count: number }[];
  polyline: string;
}

export interface ChartModel {
  width: number;
  height: number;
  hours: string[];
  yMax: number;
  series: ChartSeries[];
}

export function buildChartModel(results: JobResultsJson, width = 640, height = 240): ChartModel {
  const hourSet = new Set<string>();
  for (const summary of Object.values(results.summary)) {
    for (const bin of summary.hourly) hourSet.add(bin.hour);
  }
  const hours = [...hourSet].sort();
  let yMax = 0;
  for (const summary of Object.values(results.summary)) {
    for (const bin of summary.hourly) yMax = Math.max(yMax, bin.mean);
  }
  if (yMax === 0) yMax = 1;

  const padding = 30;
  const plotW = width - 2 * padding;
  const plotH = height - 2 * padding;
  const xFor = (hour: string) =>
    padding + (hours.length <= 1 ? plotW / 2 : (hours.indexOf(hour) / (hours.length - 1)) * plotW);
  const yFor = (mean: number) => padding + plotH - (mean / yMax) * plotH;

  const series: ChartSeries[] = Object.entries(results.summary)
    .sort(([a], [b]) => (a < b ? -1 : 1))
    .map(([cameraId, summary]) => {
      const points = summary.hourly.map((bin: HourlyBin) => ({
        x: xFor(bin.hour),
        y: yFor(bin.mean),
        hour: bin.hour,
        mean: bin.mean,
        count: bin.count,
      }));
      return {
        cameraId,
        points,
        polyline: points.map((p) => `${p.x.toFixed(1)},${p.y.toFixed(1)}`).join(" "),
      };
    });
  return { width, height, hours, yMax, series };
}

const PALETTE = ["#1976d2", "#d32f2f", "#388e3c", "#f57c00", "#7b1fa2", "#00838f"];

export function chartToSvg(model: ChartModel): string {
  const lines = model.series
    .map(
      (s, i) =>
        `<polyline fill="none" stroke="${PALETTE[i % PALETTE.length]}" stroke-width="2" points="${s.polyline}"/>` +
        s.points
          .map(
            (p) =>
              `<circle cx="${p.x.toFixed(1)}" cy="${p.y.toFixed(1)}" r="3" fill="${PALETTE[i % PALETTE.length]}">` +
              `<title>${s.cameraId} ${p.hour}: mean ${p.mean.toFixed(2)} over ${p.count} frames</title></circle>`,
          )
          .join(""),
    )
    .join("");
  const labels = model.series
    .map(
      (s, i) =>
        `<text x="${model.width - 160}" y="${18 + i * 16}" fill="${PALETTE[i % PALETTE.length]}" font-size="12">${s.cameraId}</text>`,
    )
    .join("");
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${model.width}" height="${model.height}" viewBox="0 0 ${model.width} ${model.height}">` +
    `<rect width="100%" height="100%" fill="#fafafa"/>` +
    `<text x="8" y="16" font-size="11" fill="#555">mean activity per hour (max ${model.yMax.toFixed(2)})</text>` +
    lines +
    labels +
    `</svg>`
  );
}
