/** Typed client for the session service; one instance per base URL. */

export interface StageStatus {
  status: "pending" | "running" | "done" | "failed";
  progress: number;
  error: string | null;
}

export interface VolumeInfo {
  volume: string;
  dims: [number, number, number];
  spacing: [number, number, number];
  stages: Record<string, StageStatus>;
}

export interface ScribbleRecord {
  frame: number;
  cls: "FG" | "BG";
  radius: number;
  points: [number, number][];
}

export interface SeedRecord {
  frame: number;
  x: number;
  y: number;
}

export interface Rejection {
  index: number;
  reason: string;
}

export interface PostOutcome {
  accepted: number;
  rejected: Rejection[];
}

export interface JobStatus {
  stage: string;
  status: "running" | "done" | "failed";
  progress: number;
  error: string | null;
}

export type Axis = "axial" | "coronal" | "sagittal";

export class ServiceError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    const reason = (body as { error?: string }).error ?? resp.statusText;
    throw new ServiceError(resp.status, reason);
  }
  return body as T;
}

export class ServiceClient {
  constructor(readonly base: string) {}

  async info(): Promise<VolumeInfo> {
    return asJson(await fetch(`${this.base}/info`));
  }

  /** URL for an <img>/canvas source; the server renders the PNG.
   *  `stamp` only busts the browser cache after labels change. */
  sliceUrl(
    axis: Axis,
    index: number,
    window?: { center: number; width: number },
    overlay?: string | null,
    stamp?: number,
  ): string {
    const params = new URLSearchParams();
    if (window) params.set("window", `${window.center},${window.width}`);
    if (overlay) params.set("overlay", overlay);
    if (stamp !== undefined) params.set("v", String(stamp));
    const query = params.toString();
    return `${this.base}/slice/${axis}/${index}${query ? "?" + query : ""}`;
  }

  async fetchSlice(
    axis: Axis,
    index: number,
    window?: { center: number; width: number },
    overlay?: string | null,
  ): Promise<Blob> {
    const resp = await fetch(this.sliceUrl(axis, index, window, overlay));
    if (!resp.ok) {
      const body = await resp.json().catch(() => ({}));
      const reason = (body as { error?: string }).error ?? resp.statusText;
      throw new ServiceError(resp.status, reason);
    }
    return resp.blob();
  }

  async postScribbles(records: ScribbleRecord[]): Promise<PostOutcome> {
    return asJson(
      await fetch(`${this.base}/scribbles`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(records),
      }),
    );
  }

  async postSeeds(records: SeedRecord[]): Promise<PostOutcome> {
    return asJson(
      await fetch(`${this.base}/seeds`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(records),
      }),
    );
  }

  async runStage(stage: string): Promise<string> {
    const body = await asJson<{ job: string }>(
      await fetch(`${this.base}/run/${stage}`, { method: "POST" }),
    );
    return body.job;
  }

  async progress(job: string): Promise<JobStatus> {
    return asJson(await fetch(`${this.base}/progress/${job}`));
  }

  /** Poll until the job leaves "running"; ticks report every sample. */
  async pollJob(
    job: string,
    intervalMs = 500,
    onTick?: (status: JobStatus) => void,
  ): Promise<JobStatus> {
    for (;;) {
      const status = await this.progress(job);
      onTick?.(status);
      if (status.status !== "running") return status;
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
  }

  async labels(stage: string): Promise<ArrayBuffer> {
    const resp = await fetch(`${this.base}/labels/${stage}.mvol`);
    if (!resp.ok) {
      const body = await resp.json().catch(() => ({}));
      const reason = (body as { error?: string }).error ?? resp.statusText;
      throw new ServiceError(resp.status, reason);
    }
    return resp.arrayBuffer();
  }
}
