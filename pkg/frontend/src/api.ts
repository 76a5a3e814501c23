// Thin client over the service's four endpoints. The fetch function is
// injectable so tests can replay recorded responses without a server.

import type {
  AskResponse,
  ErrorBody,
  HealthResponse,
  Mode,
  RunRecord,
  SessionResponse,
} from "./types.js";

export type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number,
    public readonly code: string = "error",
    public readonly runId: string | null = null,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function errorFrom(response: Response): Promise<ApiError> {
  let body: Partial<ErrorBody> = {};
  try {
    body = (await response.json()) as ErrorBody;
  } catch {
    // non-JSON error body; keep transport-level info
  }
  return new ApiError(
    body.message ?? `request failed with status ${response.status}`,
    response.status,
    body.code ?? "error",
    body.run_id ?? null,
  );
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchFn = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      throw await errorFrom(response);
    }
    return (await response.json()) as T;
  }

  createSession(modeDefault: Mode): Promise<SessionResponse> {
    return this.request<SessionResponse>("POST", "/v1/sessions", {
      mode_default: modeDefault,
    });
  }

  ask(sessionId: string, question: string, mode?: Mode): Promise<AskResponse> {
    const body: { question: string; mode?: Mode } = { question };
    if (mode) body.mode = mode;
    return this.request<AskResponse>("POST", `/v1/sessions/${sessionId}/ask`, body);
  }

  getRun(runId: string): Promise<RunRecord> {
    return this.request<RunRecord>("GET", `/v1/runs/${runId}`);
  }

  health(): Promise<HealthResponse> {
    return this.request<HealthResponse>("GET", "/v1/health");
  }
}
