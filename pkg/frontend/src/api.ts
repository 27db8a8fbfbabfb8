/** Typed client for the labeling service. All mutations carry the lease
 * token and an idempotency key so retries never double-apply. */

import type {
  CandidatePageWire,
  LabelEventBody,
  ProjectStatsWire,
  TrainReportWire,
} from "./types";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

export class StaleLeaseError extends ApiError {}

async function parseError(resp: Response): Promise<never> {
  let code = "internal";
  let message = resp.statusText;
  try {
    const body = await resp.json();
    if (body?.error) {
      code = body.error.code;
      message = body.error.message;
    }
  } catch {
    // non-JSON error body: keep the status text
  }
  if (resp.status === 423) {
    throw new StaleLeaseError(resp.status, code, message);
  }
  throw new ApiError(resp.status, code, message);
}

export interface CandidateParams {
  mode: string;
  term?: string;
  lo?: number;
  hi?: number;
  page?: number;
  page_size?: number;
}

export class ApiClient {
  private lease: string | null = null;

  constructor(
    readonly baseUrl: string,
    readonly project: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  get leaseToken(): string | null {
    return this.lease;
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
    idempotencyKey?: string,
  ): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.lease) headers["X-Lease-Token"] = this.lease;
    if (idempotencyKey) headers["Idempotency-Key"] = idempotencyKey;
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) await parseError(resp);
    return (await resp.json()) as T;
  }

  async health(): Promise<{ status: string; catalog_count: number }> {
    return this.request("GET", "/health");
  }

  async createProject(seed?: number): Promise<void> {
    const body: Record<string, unknown> = { name: this.project };
    if (seed !== undefined) body.seed = seed;
    const out = await this.request<{ lease: string }>("POST", "/projects", body);
    this.lease = out.lease;
  }

  async acquireLease(): Promise<void> {
    const out = await this.request<{ lease: string }>(
      "POST",
      `/projects/${this.project}/lease`,
    );
    this.lease = out.lease;
  }

  async setFeatures(matchStrings: string[]): Promise<{ feature_version: number }> {
    return this.request("POST", `/projects/${this.project}/features`, {
      match_strings: matchStrings,
    });
  }

  async candidates(params: CandidateParams): Promise<CandidatePageWire> {
    const q = new URLSearchParams();
    for (const [k, v] of Object.entries(params)) {
      if (v !== undefined) q.set(k, String(v));
    }
    return this.request("GET", `/projects/${this.project}/candidates?${q.toString()}`);
  }

  async postLabels(labels: LabelEventBody[], idempotencyKey: string): Promise<TrainReportWire> {
    return this.request("POST", `/projects/${this.project}/labels`, { labels }, idempotencyKey);
  }

  async retrain(): Promise<TrainReportWire> {
    return this.request("POST", `/projects/${this.project}/retrain`);
  }

  async stats(): Promise<ProjectStatsWire> {
    return this.request("GET", `/projects/${this.project}/stats`);
  }

  async object(objectId: string): Promise<Record<string, unknown>> {
    return this.request("GET", `/objects/${objectId}`);
  }
}
