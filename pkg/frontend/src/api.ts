/** Typed client for the editing service. All numbers the UI displays come
 * from service responses; the client never computes metrics itself. */

export interface Factors {
  shape: string;
  fg_color: string;
  bg_color: string;
  position: string;
  size: string;
}

export interface Instruction {
  field: string;
  value: string;
}

export interface Metrics {
  dir: number;
  sim: number;
  edit_success: number;
}

export interface Vocab {
  fields: Record<string, string[]>;
  grammar: string;
}

export interface GenerateRequest {
  factors?: Factors;
  caption?: number[];
  seed: number;
  cfg_text: number;
}

export interface GenerateResponse {
  image: string; // base64 PNG
  factors: Factors;
}

export interface EditRequest {
  image: string; // base64 PNG
  instruction: Instruction;
  seed: number;
  cfg_text: number;
  cfg_img: number;
}

export interface EditResponse {
  image: string;
  metrics: Metrics;
}

export interface HealthResponse {
  status: string;
  model_round: number | null;
  config: Record<string, unknown> | null;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    detail: string,
  ) {
    super(detail);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, init);
    const body = await res.json().catch(() => null);
    if (!res.ok) {
      const err = (body ?? {}) as { error?: string; detail?: string };
      throw new ApiError(res.status, err.error ?? "http_error", err.detail ?? res.statusText);
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  health(): Promise<HealthResponse> {
    return this.request<HealthResponse>("/health");
  }

  vocab(): Promise<Vocab> {
    return this.request<Vocab>("/vocab");
  }

  generate(req: GenerateRequest): Promise<GenerateResponse> {
    return this.post<GenerateResponse>("/generate", req);
  }

  edit(req: EditRequest): Promise<EditResponse> {
    return this.post<EditResponse>("/edit", req);
  }
}
