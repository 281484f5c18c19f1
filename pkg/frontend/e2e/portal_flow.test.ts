/**
 * Portal flow against a live primary stack.
 *
 * Spawns the camnet testbed and REST service (the primary's external
 * interfaces), registers the farm's cameras with map locations, then
 * drives the portal's own controllers end to end: cluster layer sums to
 * the fixture count, the snapshot popup model yields real image bytes,
 * and a submitted job reaches finished with a chartable series.
 */

import { type ChildProcess, spawn, spawnSync } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, type CameraRecordJson, type JobResultsJson } from "../src/api.js";
import { buildChartModel } from "../src/chart.js";
import { ClusterLayer, type ClusterMarker } from "../src/clusters.js";
import { JobPanel } from "../src/jobs.js";
import type { Viewport } from "../src/mercator.js";
import { draftSubmittable } from "../src/state.js";

const PYTHON = process.env.CAMNET_PYTHON ?? "python3";
const API_PORT = 18650 + Math.floor(Math.random() * 1000);
const BASE = `http://127.0.0.1:${API_PORT}`;

let workDir: string;
let farmProc: ChildProcess;
let serveProc: ChildProcess;
let farmInfo: {
  cidr: string;
  port: number;
  endpoints: { name: string; role: string; url: string | null; mode: string | null }[];
};
const api = new ApiClient(BASE);

function waitForLine(proc: ChildProcess): Promise<string> {
  return new Promise((resolve, reject) => {
    let buffer = "";
    proc.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const nl = buffer.indexOf("\n");
      if (nl >= 0) resolve(buffer.slice(0, nl));
    });
    proc.on("exit", (code) => reject(new Error(`process exited early (${code})`)));
    setTimeout(() => reject(new Error("timed out waiting for process output")), 30000);
  });
}

async function waitForHealth(): Promise<void> {
  for (let i = 0; i < 100; i++) {
    try {
      const resp = await fetch(`${BASE}/healthz`);
      if (resp.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 150));
  }
  throw new Error("serve did not become healthy");
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "camnet-portal-"));
  const spec = {
    cameras: [0, 1, 2, 3].map((i) => ({
      name: `pcam${i}`,
      brand: ["axis", "foscam", "panasonic", "hikvision"][i],
      mode: "mjpeg_stream",
      fps: 10.0,
      format: "pgm",
      scene: { kind: "moving_blobs", count: 3, size_px: 8, seed: 700 + i },
    })),
    decoys: 1,
    base_cidr: "127.105.0.0/28",
  };
  const specPath = join(workDir, "farm.json");
  writeFileSync(specPath, JSON.stringify(spec));

  farmProc = spawn(
    PYTHON,
    ["-m", "camnet.cli", "testbed", "up", "--spec", specPath, "--state", join(workDir, "state.json")],
    { stdio: ["ignore", "pipe", "ignore"] },
  );
  farmInfo = JSON.parse(await waitForLine(farmProc));

  serveProc = spawn(
    PYTHON,
    ["-m", "camnet.cli", "serve", "--db", join(workDir, "portal.db"), "--listen", `127.0.0.1:${API_PORT}`],
    { stdio: "ignore" },
  );
  await waitForHealth();

  // operator registers the farm's cameras, geocoded onto a city block grid
  const cameras = farmInfo.endpoints.filter((e) => e.role === "camera");
  for (let i = 0; i < cameras.length; i++) {
    const cam = cameras[i]!;
    const record: CameraRecordJson = {
      id: cam.name,
      kind: "ip_camera",
      endpoint: { url: cam.url!, mode: cam.mode!, declared_format: "mjpeg" },
      location: {
        point: { latitude: 40.7 + 0.01 * i, longitude: -74.0 - 0.01 * i },
        provenance: "owner_provided",
        country: "US",
        state: "NY",
        city: "New York",
        },
      quality: { width: 160, height: 120, estimated_refresh_rate: 10 },
      reliability: { uptime_fraction: 1.0, last_seen: Date.now() - 1000, observation_window: 60 },
      tags: ["disposition:accepted"],
    };
    const stored = await api.registerCamera(record);
    expect(stored.id).toBe(cam.name);
  }
}, 90000);

afterAll(() => {
  spawnSync(PYTHON, ["-m", "camnet.cli", "testbed", "down", "--state", join(workDir, "state.json")], {
    timeout: 15000,
  });
  serveProc?.kill("SIGTERM");
  farmProc?.kill("SIGKILL");
});

describe("portal flow against the live stack", () => {
  const viewport: Viewport = { centerLat: 40.72, centerLon: -74.02, zoom: 10, widthPx: 960, heightPx: 600 };

  it("map cluster badges sum to the fixture camera count", async () => {
    let markers: ClusterMarker[] = [];
    let total = 0;
    const layer = new ClusterLayer(api, {
      onMarkers: (m, t) => {
        markers = m;
        total = t;
      },
      onError: (message) => {
        throw new Error(message);
      },
    });
    await layer.refresh(viewport);
    expect(total).toBe(4);
    expect(markers.length).toBeGreaterThanOrEqual(1);
    for (const m of markers) {
      expect(m.x).toBeGreaterThanOrEqual(0);
      expect(m.y).toBeGreaterThanOrEqual(0);
    }
  });

  it("snapshot popup renders real image bytes", async () => {
    const snap = await api.fetchSnapshot("pcam0");
    expect(snap.bytes.byteLength).toBeGreaterThan(100);
    const head = new Uint8Array(snap.bytes.slice(0, 2));
    // farm streams PGM frames; the popup shows whatever the camera sends
    expect(String.fromCharCode(...head)).toBe("P5");
    expect(snap.contentType).toContain("x-portable-graymap");
  });

  it("job submission reaches finished and charts the series", async () => {
    const draft = { camera_ids: ["pcam0", "pcam1"], fps: 15, duration: 6, analyzer: "motion_features" };
    expect(draftSubmittable(draft)).toBe(true);
    const statuses: string[] = [];
    let results: JobResultsJson | null = null;
    const panel = new JobPanel(
      api,
      {
        onStatus: (job) => statuses.push(job.state),
        onFinished: (_job, r) => {
          results = r;
        },
        onError: (message) => {
          throw new Error(message);
        },
      },
      500,
    );
    const id = await panel.submit(draft);
    expect(id).toBeTruthy();
    const deadline = Date.now() + 60000;
    while (results === null && Date.now() < deadline) {
      await new Promise((r) => setTimeout(r, 500));
    }
    expect(results).not.toBeNull();
    const r = results!;
    expect(r.state).toBe("finished");
    for (const cam of draft.camera_ids) {
      const series = r.series[cam]!;
      expect(series.length).toBeGreaterThanOrEqual(40); // ~10 fps for 6 s, pairwise
      for (const point of series) {
        expect(point.value).toBe(3); // planted blob count from the farm spec
      }
    }
    const chart = buildChartModel(r);
    expect(chart.series.map((s) => s.cameraId)).toEqual(["pcam0", "pcam1"]);
    expect(chart.series[0]!.points.length).toBeGreaterThanOrEqual(1);
    expect(chart.series[0]!.points[0]!.mean).toBe(3);
  }, 90000);

  it("rejects an invalid draft before any network call", async () => {
    const errors: string[] = [];
    const panel = new JobPanel(api, {
      onStatus: () => undefined,
      onFinished: () => undefined,
      onError: (m) => errors.push(m),
    });
    const id = await panel.submit({ camera_ids: [], fps: 0, duration: 10, analyzer: "motion_features" });
    expect(id).toBeNull();
    expect(errors).toHaveLength(1);
  });

  it("cancel via the panel reaches cancelled state", async () => {
    const statuses: string[] = [];
    const panel = new JobPanel(
      api,
      { onStatus: (j) => statuses.push(j.state), onFinished: () => undefined, onError: () => undefined },
      100000, // never poll; we cancel immediately
    );
    const id = await panel.submit({ camera_ids: ["pcam2"], fps: 5, duration: 30, analyzer: "motion_features" });
    expect(id).toBeTruthy();
    await new Promise((r) => setTimeout(r, 1000));
    await panel.cancel();
    expect(statuses.at(-1)).toBe("cancelled");
  }, 60000);
});
