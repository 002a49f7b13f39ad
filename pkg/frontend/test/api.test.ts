import { describe, expect, it } from 'vitest';

import { ApiClient, ApiError } from '../src/api.js';

interface Recorded {
  url: string;
  method: string;
  headers: Record<string, string>;
  body: unknown;
}

function mockFetch(responses: Array<{ status?: number; body: unknown }>) {
  const calls: Recorded[] = [];
  const impl = (async (url: RequestInfo | URL, init?: RequestInit) => {
    calls.push({
      url: String(url),
      method: init?.method ?? 'GET',
      headers: (init?.headers ?? {}) as Record<string, string>,
      body: init?.body ? JSON.parse(String(init.body)) : undefined,
    });
    const next = responses.shift() ?? { status: 200, body: {} };
    return new Response(JSON.stringify(next.body), { status: next.status ?? 200 });
  }) as typeof fetch;
  return { impl, calls };
}

describe('ApiClient', () => {
  it('logs in and sends the bearer token afterwards', async () => {
    const { impl, calls } = mockFetch([
      { body: { token: 'tok-1', role: 'practitioner', expires_in_s: 100 } },
      { body: { patient_id: 'p-1', packets: [], next_cursor: null, total: 0 } },
    ]);
    const api = new ApiClient('http://server/', impl);
    const session = await api.login('dr', 'pw');
    expect(session.role).toBe('practitioner');
    await api.collectData('p-1', { tStart: 5, limit: 10 });
    expect(calls[0].url).toBe('http://server/login');
    expect(calls[0].body).toEqual({ principal: 'dr', password: 'pw' });
    expect(calls[1].headers['Authorization']).toBe('Bearer tok-1');
    const url = new URL(calls[1].url);
    expect(url.pathname).toBe('/collectData');
    expect(url.searchParams.get('patient_id')).toBe('p-1');
    expect(url.searchParams.get('t_start')).toBe('5');
    expect(url.searchParams.get('limit')).toBe('10');
  });

  it('shapes uploadInfo bodies with the optional slot time', async () => {
    const { impl, calls } = mockFetch([{ body: { item_id: 4 } }]);
    const api = new ApiClient('http://server', impl);
    api.token = 't';
    const resp = await api.uploadInfo('p-1', 'consultation_slot', 'tuesday', 1700);
    expect(resp.item_id).toBe(4);
    expect(calls[0].body).toEqual({
      patient_id: 'p-1',
      kind: 'consultation_slot',
      text: 'tuesday',
      at: 1700,
    });
  });

  it('surfaces server rejections verbatim with the status attached', async () => {
    const { impl } = mockFetch([{ status: 404, body: { error: "unknown patient 'x'" } }]);
    const api = new ApiClient('http://server', impl);
    api.token = 't';
    const failure = await api.patient('x').catch((e) => e as ApiError);
    expect(failure).toBeInstanceOf(ApiError);
    expect((failure as ApiError).status).toBe(404);
    expect((failure as ApiError).message).toBe("unknown patient 'x'");
    expect((failure as ApiError).authExpired).toBe(false);
  });

  it('flags 401 responses as auth expiry for the re-login prompt', async () => {
    const { impl } = mockFetch([{ status: 401, body: { error: 'token expired' } }]);
    const api = new ApiClient('http://server', impl);
    api.token = 'stale';
    const failure = await api.listAlerts().catch((e) => e as ApiError);
    expect((failure as ApiError).authExpired).toBe(true);
  });

  it('builds the stream url with token and resume id', () => {
    const api = new ApiClient('http://server');
    api.token = 'tok';
    const url = new URL(api.alertStreamUrl(42));
    expect(url.pathname).toBe('/alerts');
    expect(url.searchParams.get('token')).toBe('tok');
    expect(url.searchParams.get('last_event_id')).toBe('42');
  });
});
