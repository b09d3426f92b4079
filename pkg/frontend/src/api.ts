// Thin typed client over the /v1 REST API. Every method resolves to a
// {status, body} pair so callers can branch on the 409 family without
// exceptions.

export type Label = "normal" | "defect";

export interface SessionSnapshot {
  session_id: string;
  dataset_id: string;
  state: "initializing" | "training" | "awaiting_labels" | "complete" | "failed";
  error: string | null;
  config: Record<string, unknown>;
  progress: {
    completed_queries: number;
    total_queries: number;
    teach_size: number;
    pool_size: number;
    metric_rows: number;
  };
}

export interface QueryEntry {
  sample_id: string;
  score: number;
  image_url: string;
  labeled: boolean;
}

export interface QueryView {
  query_index: number;
  strategy: string;
  entries: QueryEntry[];
  remaining: string[];
}

export interface MetricsRow {
  query_index: number;
  epoch: number;
  train_accuracy: number;
  train_loss: number;
  test_accuracy: number;
  test_loss: number;
}

export interface RunSummary {
  last_query_mean_accuracy: number;
  last_query_std: number;
  outliers_removed: number;
  outlier_rule: string;
}

export interface MetricsPage {
  rows: MetricsRow[];
  next_since: number;
  state: string;
  summary?: RunSummary;
}

export interface SubmitResult {
  accepted: string[];
  already_committed: string[];
  remaining: string[];
  state: string;
}

export interface Problem {
  code: string;
  message: string;
  details: Record<string, unknown>;
}

export interface ApiResponse<T> {
  status: number;
  body: T | Problem;
}

export function isProblem<T>(resp: ApiResponse<T>): boolean {
  return resp.status >= 400;
}

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: typeof fetch = fetch.bind(globalThis),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<ApiResponse<T>> {
    const resp = await this.fetchFn(this.base + path, init);
    const body = (await resp.json()) as T | Problem;
    return { status: resp.status, body };
  }

  getSession(id: string): Promise<ApiResponse<SessionSnapshot>> {
    return this.request(`/v1/sessions/${id}`);
  }

  getQuery(id: string): Promise<ApiResponse<QueryView>> {
    return this.request(`/v1/sessions/${id}/query`);
  }

  getMetrics(id: string, since: number): Promise<ApiResponse<MetricsPage>> {
    return this.request(`/v1/sessions/${id}/metrics?since=${since}`);
  }

  submitLabels(
    id: string,
    labels: Record<string, Label>,
    annotator: string,
  ): Promise<ApiResponse<SubmitResult>> {
    return this.request(`/v1/sessions/${id}/labels`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ labels, annotator }),
    });
  }
}
