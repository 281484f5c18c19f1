/**
 * Job submission and live status polling.
 *
 * Submits the draft, then polls the job every pollMs until it reaches a
 * terminal state; finished jobs also pull their result series so the view
 * can chart them.
 */

import type { ApiClient, JobJson, JobResultsJson } from "./api.js";
import { draftProblems, type JobDraftState } from "./state.js";

const TERMINAL = new Set(["finished", "failed", "cancelled"]);

export interface JobEvents {
  onStatus(job: JobJson): void;
  onFinished(job: JobJson, results: JobResultsJson): void;
  onError(message: string): void;
}

type Scheduler = (fn: () => void, ms: number) => unknown;

export class JobPanel {
  jobId: string | null = null;
  lastJob: JobJson | null = null;
  private stopped = false;

  constructor(
    private readonly api: ApiClient,
    private readonly events: JobEvents,
    private readonly pollMs = 2000,
    private readonly schedule: Scheduler = (fn, ms) => setTimeout(fn, ms),
  ) {}

  /** Client-side validation first; server 422s surface via onError. */
  async submit(draft: JobDraftState): Promise<string | null> {
    const problems = draftProblems(draft);
    if (problems.length > 0) {
      this.events.onError(problems.join("; "));
      return null;
    }
    try {
      const { id } = await this.api.submitJob({
        camera_ids: draft.camera_ids,
        fps: draft.fps,
        duration: draft.duration,
        analyzer: draft.analyzer,
      });
      this.jobId = id;
      this.stopped = false;
      void this.poll();
      return id;
    } catch (err) {
      this.events.onError(err instanceof Error ? err.message : String(err));
      return null;
    }
  }

  async poll(): Promise<void> {
    if (this.jobId === null || this.stopped) return;
    try {
      const job = await this.api.getJob(this.jobId);
      this.lastJob = job;
      this.events.onStatus(job);
      if (TERMINAL.has(job.state)) {
        this.stopped = true;
        if (job.state === "finished" || job.state === "cancelled") {
          const results = await this.api.getResults(this.jobId);
          this.events.onFinished(job, results);
        }
        return;
      }
    } catch (err) {
      this.events.onError(err instanceof Error ? err.message : String(err));
    }
    this.schedule(() => void this.poll(), this.pollMs);
  }

  async cancel(): Promise<void> {
    if (this.jobId === null) return;
    try {
      const job = await this.api.cancelJob(this.jobId);
      this.lastJob = job;
      this.events.onStatus(job);
    } catch (err) {
      this.events.onError(err instanceof Error ? err.message : String(err));
    }
  }
}
