import { describe, expect, it, vi } from 'vitest';
import { ApiClient, ApiError } from '../src/api.js';

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}

describe('ApiClient', () => {
  it('rejects an empty prompt without sending any request', async () => {
    const fetchFn = vi.fn();
    const api = new ApiClient('http://node', fetchFn as unknown as typeof fetch);
    await expect(api.generate({ prompt: '   ', mode: 'lambda-split', model: 'llm' }))
      .rejects.toBeInstanceOf(ApiError);
    expect(fetchFn).not.toHaveBeenCalled();
  });

  it('posts generate requests as JSON to /generate', async () => {
    const fetchFn = vi.fn(async (url: string, init?: RequestInit) => {
      expect(url).toBe('http://node/generate');
      expect(init?.method).toBe('POST');
      const body = JSON.parse(String(init?.body));
      expect(body.prompt).toBe('hi there');
      expect(body.mode).toBe('cloud-only');
      return jsonResponse({ session_id: 1, status: 'done', report: {}, output: {} });
    });
    const api = new ApiClient('http://node', fetchFn as unknown as typeof fetch);
    const result = await api.generate({ prompt: 'hi there', mode: 'cloud-only', model: 'llm' });
    expect(result.session_id).toBe(1);
  });

  it('builds traffic URLs with and without a session id', async () => {
    const urls: string[] = [];
    const fetchFn = vi.fn(async (url: string) => {
      urls.push(url);
      return jsonResponse({ session_id: 2, status: 'done', report: {}, output_preview: '' });
    });
    const api = new ApiClient('http://node', fetchFn as unknown as typeof fetch);
    await api.traffic(7);
    await api.traffic();
    expect(urls).toEqual(['http://node/traffic?session=7', 'http://node/traffic']);
  });

  it('surfaces server error bodies as ApiError with status', async () => {
    const fetchFn = vi.fn(async () => jsonResponse({ error: 'cloud unreachable' }, 502));
    const api = new ApiClient('http://node', fetchFn as unknown as typeof fetch);
    const err = await api.capture(3).catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(502);
    expect((err as ApiError).message).toContain('cloud unreachable');
  });

  it('wraps network failures as status 0', async () => {
    const fetchFn = vi.fn(async () => { throw new TypeError('connection refused'); });
    const api = new ApiClient('http://node', fetchFn as unknown as typeof fetch);
    const err = await api.config().catch((e: unknown) => e);
    expect((err as ApiError).status).toBe(0);
  });
});
