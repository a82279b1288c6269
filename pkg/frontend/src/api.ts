/** Thin fetch client for the control API. The panel never recomputes
 * metrics client-side; everything rendered comes from these responses. */

import type {
  CaptureView,
  ConfigView,
  GenerateParams,
  GenerateResult,
  TrafficView,
} from './types.js';

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(readonly baseUrl: string,
              private readonly fetchFn: typeof fetch = fetch) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let res: Response;
    try {
      res = await this.fetchFn(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ApiError(0, `node unreachable: ${String(err)}`);
    }
    const body = await res.json().catch(() => ({}));
    if (!res.ok) {
      const detail = (body as { error?: string }).error ?? res.statusText;
      throw new ApiError(res.status, detail);
    }
    return body as T;
  }

  /** POST /generate. Rejects empty prompts client-side: no request is sent. */
  generate(params: GenerateParams): Promise<GenerateResult> {
    if (!params.prompt.trim()) {
      return Promise.reject(new ApiError(0, 'prompt must not be empty'));
    }
    return this.request<GenerateResult>('/generate', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(params),
    });
  }

  traffic(sessionId?: number): Promise<TrafficView> {
    const q = sessionId === undefined ? '' : `?session=${sessionId}`;
    return this.request<TrafficView>(`/traffic${q}`);
  }

  capture(sessionId: number): Promise<CaptureView> {
    return this.request<CaptureView>(`/capture?session=${sessionId}`);
  }

  config(): Promise<ConfigView> {
    return this.request<ConfigView>('/config');
  }
}
