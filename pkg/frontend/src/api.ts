/**
 * Typed client for the annotation service HTTP API.
 *
 * Configured with the single service endpoint URL; the fetch implementation
 * is injectable so tests can run against an in-memory stub.
 */

export interface RoundPayload {
  number: number;
  criterion: string;
  budget: number;
  checkpoint: string;
  created_at: number;
  completed_at: number | null;
}

export interface StatusPayload {
  round: RoundPayload | null;
  labeled_count: number;
  pool_count: number;
  checkpoint: string;
}

export interface VocabPayload {
  intents: string[];
  slot_tags: string[];
}

export interface TaskPayload {
  id: number;
  tokens: string[];
  suggested_intent: string;
  suggested_slots: string[];
  conf_int: number;
  conf_slot: number;
  conf_joint: number | null;
  rank: number;
  status: string;
}

export interface LabelPayload {
  intent: string;
  slots: string[];
  allow_new_tags?: boolean;
}

export interface AckPayload {
  ok: boolean;
  task: TaskPayload;
  labeled_count: number;
  pool_count: number;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Error carrying the HTTP status so callers can distinguish 4xx from 5xx. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }

  get isClientError(): boolean {
    return this.status >= 400 && this.status < 500;
  }
}

export class ApiClient {
  private readonly base: string;
  private readonly fetchImpl: FetchLike;

  constructor(endpointUrl: string, fetchImpl?: FetchLike) {
    this.base = endpointUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.base}${path}`, init);
    const body = await response.text();
    if (!response.ok) {
      let detail = body;
      try {
        detail = JSON.parse(body).detail ?? body;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(response.status, String(detail));
    }
    return JSON.parse(body) as T;
  }

  status(): Promise<StatusPayload> {
    return this.request<StatusPayload>("/status");
  }

  vocab(): Promise<VocabPayload> {
    return this.request<VocabPayload>("/vocab");
  }

  fetchTasks(n: number): Promise<TaskPayload[]> {
    return this.request<TaskPayload[]>(`/tasks?n=${n}`);
  }

  submitLabel(taskId: number, payload: LabelPayload): Promise<AckPayload> {
    return this.request<AckPayload>(`/tasks/${taskId}/label`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  skipTask(taskId: number): Promise<AckPayload> {
    return this.request<AckPayload>(`/tasks/${taskId}/skip`, { method: "POST" });
  }

  retrain(): Promise<{ job_id: string }> {
    return this.request<{ job_id: string }>("/retrain", { method: "POST" });
  }

  jobState(jobId: string): Promise<{ state: string }> {
    return this.request<{ state: string }>(`/jobs/${jobId}`);
  }
}
