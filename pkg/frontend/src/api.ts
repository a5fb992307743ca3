/**
 * Typed client for the capsift service. Every request goes through one
 * fetch wrapper so the set of endpoints the UI can reach is auditable in a
 * single place (and asserted in the contract tests).
 */

import {
  ImageDetail,
  ImageList,
  JobStatus,
  RetrainResponse,
  ReviewResponse,
  SCHEMA_VERSION,
  Status,
  TaskList,
  VoteResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface GalleryQuery {
  taskSet?: string;
  order?: "score" | "date";
  page?: number;
  pageSize?: number;
}

export class ApiClient {
  constructor(
    private readonly token: string,
    private readonly base: string = "",
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T extends { schema_version: number }>(
    path: string,
    init: RequestInit = {},
  ): Promise<T> {
    const response = await this.fetchImpl(this.base + path, {
      ...init,
      headers: {
        Authorization: `Bearer ${this.token}`,
        ...(init.body ? { "Content-Type": "application/json" } : {}),
        ...(init.headers ?? {}),
      },
    });
    const text = await response.text();
    let payload: unknown = null;
    try {
      payload = text ? JSON.parse(text) : null;
    } catch {
      payload = null;
    }
    if (!response.ok) {
      const detail =
        payload && typeof payload === "object"
          ? ((payload as Record<string, unknown>).detail ??
            (payload as Record<string, unknown>).error ??
            text)
          : text;
      throw new ApiError(response.status, String(detail));
    }
    const body = payload as T;
    if (!body || body.schema_version !== SCHEMA_VERSION) {
      throw new ApiError(500, `unexpected schema_version in response from ${path}`);
    }
    return body;
  }

  async listImages(query: GalleryQuery = {}): Promise<ImageList> {
    const params = new URLSearchParams();
    if (query.taskSet) params.set("task_set", query.taskSet);
    if (query.order) params.set("order", query.order);
    if (query.page) params.set("page", String(query.page));
    if (query.pageSize) params.set("page_size", String(query.pageSize));
    const suffix = params.size ? `?${params.toString()}` : "";
    return this.request<ImageList>(`/images${suffix}`);
  }

  async imageDetail(imageId: string): Promise<ImageDetail> {
    return this.request<ImageDetail>(`/images/${imageId}`);
  }

  imageBlobUrl(imageId: string): string {
    return `${this.base}/images/${imageId}/blob`;
  }

  async listTasks(): Promise<TaskList> {
    return this.request<TaskList>("/tasks");
  }

  async createTaskSet(texts: string[]): Promise<string> {
    const payload = await this.request<{ schema_version: number; id: string }>("/tasks", {
      method: "POST",
      body: JSON.stringify({ texts }),
    });
    return payload.id;
  }

  async submitReview(imageId: string, caption: string): Promise<ReviewResponse> {
    return this.request<ReviewResponse>(`/images/${imageId}/reviews`, {
      method: "POST",
      body: JSON.stringify({ caption }),
    });
  }

  async vote(captionId: string): Promise<VoteResponse> {
    return this.request<VoteResponse>(`/captions/${captionId}/votes`, { method: "POST" });
  }

  async status(): Promise<Status> {
    return this.request<Status>("/status");
  }

  async triggerRetrain(): Promise<string> {
    const payload = await this.request<RetrainResponse>("/admin/retrain", { method: "POST" });
    return payload.job_id;
  }

  async jobStatus(jobId: string): Promise<JobStatus> {
    return this.request<JobStatus>(`/admin/jobs/${jobId}`);
  }

  exportUrl(what: "dataset" | "weights"): string {
    return `${this.base}/export/${what}`;
  }
}

/** Endpoints the UI is allowed to touch; audited in the contract tests. */
export const DOCUMENTED_ENDPOINTS = [
  "GET /images",
  "GET /images/{id}",
  "GET /images/{id}/blob",
  "GET /tasks",
  "POST /tasks",
  "POST /images/{id}/reviews",
  "POST /captions/{id}/votes",
  "GET /status",
  "POST /admin/retrain",
  "GET /admin/jobs/{id}",
  "GET /export/dataset",
  "GET /export/weights",
] as const;
