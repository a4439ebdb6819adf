/** Typed client for the chat service HTTP API.
 *
 * The fetch implementation is injectable so tests can run against a mocked
 * service; the base URL is configurable so the page can point anywhere.
 */

export interface DecodeControls {
  strategy: "greedy" | "top_k";
  top_k: number;
  temperature: number;
  max_new_tokens?: number;
}

// mirror of the server-side cap; the panel refuses values beyond it
export const MAX_NEW_TOKENS_CAP = 256;

export interface MessageResponse {
  reply: string;
  turn_index: number;
  disclaimer?: string;
}

export interface HistoryTurn {
  speaker: "user" | "bot";
  text: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
  ) {
    super(`${status}: ${code}`);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function errorCode(res: Response): Promise<string> {
  try {
    const body = await res.json();
    return typeof body?.error === "string" ? body.error : "unknown";
  } catch {
    return "unknown";
  }
}

export class ChatApi {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (!res.ok) {
      throw new ApiError(res.status, await errorCode(res));
    }
    return (await res.json()) as T;
  }

  createSession(): Promise<{ session_id: string }> {
    return this.request("/v1/sessions", { method: "POST" });
  }

  postMessage(
    sessionId: string,
    text: string,
    decode?: Partial<DecodeControls>,
  ): Promise<MessageResponse> {
    const body: Record<string, unknown> = { text };
    if (decode) {
      body.decode = decode;
    }
    return this.request(`/v1/sessions/${sessionId}/messages`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  getHistory(sessionId: string): Promise<{ turns: HistoryTurn[] }> {
    return this.request(`/v1/sessions/${sessionId}/history`);
  }

  health(): Promise<{ status: string; model: { n_layers: number; params: number } }> {
    return this.request("/healthz");
  }
}
