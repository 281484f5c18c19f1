/**
 * Typed client for the camnet registry/runtime REST API.
 *
 * Every number the portal displays comes out of these responses; nothing
 * is synthesized client-side.
 */

export interface GeoPointJson {
  latitude: number;
  longitude: number;
}

export interface CameraRecordJson {
  id: string;
  kind: string;
  endpoint: { url: string; mode: string; declared_format: string | null };
  location: {
    point: GeoPointJson | null;
    provenance: string;
    country: string | null;
    state: string | null;
    city: string | null;
  };
  quality: { width: number | null; height: number | null; estimated_refresh_rate: number | null };
  reliability: { uptime_fraction: number; last_seen: number; observation_window: number };
  tags: string[];
}

export interface ClusterJson {
  centroid: GeoPointJson;
  count: number;
  representative_id: string;
  cell: { zoom: number; x: number; y: number };
}

export interface CameraPage {
  items: CameraRecordJson[];
  total: number;
}

export interface JobJson {
  id: string;
  camera_ids: string[];
  fps: number;
  duration: number;
  analyzer: string;
  params: Record<string, unknown>;
  state: "pending" | "running" | "finished" | "failed" | "cancelled";
  streams: Record<string, { state: string; frames: number; errors: number; detail: string }>;
  truncated: boolean;
}

export interface ResultPointJson {
  seq: number;
  t: number;
  value: number;
}

export interface HourlyBin {
  hour: string;
  count: number;
  mean: number;
}

export interface JobResultsJson {
  job_id: string;
  state: string;
  streams: JobJson["streams"];
  series: Record<string, ResultPointJson[]>;
  summary: Record<string, { count: number; mean: number | null; max: number | null; hourly: HourlyBin[] }>;
  truncated: boolean;
}

export interface JobDraft {
  camera_ids: string[];
  fps: number;
  duration: number;
  analyzer: string;
  params?: Record<string, unknown>;
}

export interface Bbox {
  minLon: number;
  minLat: number;
  maxLon: number;
  maxLat: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly details?: unknown,
  ) {
    super(message);
  }
}

export type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;

function bboxParam(b: Bbox): string {
  return `${b.minLon},${b.minLat},${b.maxLon},${b.maxLat}`;
}

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchFn = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.base + path, init);
    if (!resp.ok) {
      let code = `http_${resp.status}`;
      let message = resp.statusText;
      let details: unknown;
      try {
        const body = (await resp.json()) as { code?: string; message?: string; details?: unknown };
        code = body.code ?? code;
        message = body.message ?? message;
        details = body.details;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status, code, message, details);
    }
    return (await resp.json()) as T;
  }

  listCameras(filters: {
    bbox?: Bbox;
    country?: string;
    state?: string;
    city?: string;
    disposition?: string;
    limit?: number;
    offset?: number;
  }): Promise<CameraPage> {
    const params = new URLSearchParams();
    if (filters.bbox) params.set("bbox", bboxParam(filters.bbox));
    for (const key of ["country", "state", "city", "disposition"] as const) {
      const value = filters[key];
      if (value) params.set(key, value);
    }
    if (filters.limit !== undefined) params.set("limit", String(filters.limit));
    if (filters.offset !== undefined) params.set("offset", String(filters.offset));
    const qs = params.toString();
    return this.request<CameraPage>(`/cameras${qs ? "?" + qs : ""}`);
  }

  getCamera(id: string): Promise<CameraRecordJson> {
    return this.request<CameraRecordJson>(`/cameras/${encodeURIComponent(id)}`);
  }

  registerCamera(record: CameraRecordJson): Promise<CameraRecordJson> {
    return this.request<CameraRecordJson>("/cameras", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(record),
    });
  }

  snapshotUrl(id: string): string {
    return `${this.base}/cameras/${encodeURIComponent(id)}/snapshot`;
  }

  async fetchSnapshot(id: string): Promise<{ contentType: string; bytes: ArrayBuffer }> {
    const resp = await this.fetchFn(this.snapshotUrl(id));
    if (!resp.ok) {
      throw new ApiError(resp.status, `http_${resp.status}`, "snapshot fetch failed");
    }
    return {
      contentType: resp.headers.get("content-type") ?? "application/octet-stream",
      bytes: await resp.arrayBuffer(),
    };
  }

  getClusters(bbox: Bbox, zoom: number, signal?: AbortSignal): Promise<ClusterJson[]> {
    const params = new URLSearchParams({ bbox: bboxParam(bbox), zoom: String(zoom) });
    return this.request<ClusterJson[]>(`/clusters?${params}`, signal ? { signal } : undefined);
  }

  submitJob(draft: JobDraft): Promise<{ id: string }> {
    return this.request<{ id: string }>("/jobs", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(draft),
    });
  }

  getJob(id: string): Promise<JobJson> {
    return this.request<JobJson>(`/jobs/${encodeURIComponent(id)}`);
  }

  getResults(id: string, cameraId?: string): Promise<JobResultsJson> {
    const qs = cameraId ? `?camera_id=${encodeURIComponent(cameraId)}` : "";
    return this.request<JobResultsJson>(`/jobs/${encodeURIComponent(id)}/results${qs}`);
  }

  cancelJob(id: string): Promise<JobJson> {
    return this.request<JobJson>(`/jobs/${encodeURIComponent(id)}`, { method: "DELETE" });
  }
}
