// Typed client for the record server HTTP API. The console is a pure client:
// every value it renders comes from these endpoints, never local fabrication.

export type Role = 'patient' | 'practitioner';

export interface LoginResponse {
  token: string;
  role: Role;
  expires_in_s: number;
}

export interface Packet {
  patient_id: string;
  t: number;
  activity: 1 | 2 | 3 | 4;
  spo2: number;
  hr: number;
  lat: number;
  lon: number;
  flags?: string[];
}

export interface PacketEntry {
  packet: Packet;
  risk: number;
  severity: 'warn' | 'critical' | null;
  causes: string[];
  alert_id: number | null;
}

export interface CollectResponse {
  patient_id: string;
  packets: PacketEntry[];
  next_cursor: number | null;
  total: number;
}

export interface AlertEvent {
  id: number;
  patient_id: string;
  t: number;
  severity: 'warn' | 'critical';
  cause: string;
  risk: number;
  lat: number;
  lon: number;
  spo2: number;
  hr: number;
  activity: number;
}

export type InfoKind = 'recommendation' | 'prescription' | 'consultation_slot';

export interface InfoItem {
  id: number;
  patient_id: string;
  kind: InfoKind;
  text: string;
  author: string;
  at?: number;
}

export interface PatientSummary {
  patient_id: string;
  demographics: Record<string, unknown>;
  monitoring_status: string;
  history_len: number;
  first_t: number | null;
  last_t: number | null;
  latest: PacketEntry | null;
  alert_count: number;
  info_count: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }

  get authExpired(): boolean {
    return this.status === 401;
  }
}

type FetchLike = typeof fetch;

export class ApiClient {
  token: string | null = null;

  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, '');
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
    headers: Record<string, string> = {},
  ): Promise<T> {
    const allHeaders: Record<string, string> = { ...headers };
    if (body !== undefined) allHeaders['Content-Type'] = 'application/json';
    if (this.token) allHeaders['Authorization'] = `Bearer ${this.token}`;
    const resp = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers: allHeaders,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await resp.text();
    if (!resp.ok) {
      let message = text;
      try {
        message = (JSON.parse(text) as { error?: string }).error ?? text;
      } catch {
        // non-JSON error body: surface it verbatim
      }
      throw new ApiError(resp.status, message);
    }
    return JSON.parse(text) as T;
  }

  async login(principal: string, password: string): Promise<LoginResponse> {
    const resp = await this.request<LoginResponse>('POST', '/login', {
      principal,
      password,
    });
    this.token = resp.token;
    return resp;
  }

  logout(): void {
    this.token = null;
  }

  health(): Promise<{ ok: boolean; patients: number }> {
    return this.request('GET', '/health');
  }

  patient(patientId: string): Promise<PatientSummary> {
    return this.request('GET', `/patients/${encodeURIComponent(patientId)}`);
  }

  collectData(
    patientId: string,
    opts: { tStart?: number; tEnd?: number; cursor?: number; limit?: number } = {},
  ): Promise<CollectResponse> {
    const params = new URLSearchParams({ patient_id: patientId });
    if (opts.tStart !== undefined) params.set('t_start', String(opts.tStart));
    if (opts.tEnd !== undefined) params.set('t_end', String(opts.tEnd));
    if (opts.cursor !== undefined) params.set('cursor', String(opts.cursor));
    if (opts.limit !== undefined) params.set('limit', String(opts.limit));
    return this.request('GET', `/collectData?${params}`);
  }

  uploadInfo(
    patientId: string,
    kind: InfoKind,
    text: string,
    at?: number,
  ): Promise<{ item_id: number }> {
    const body: Record<string, unknown> = { patient_id: patientId, kind, text };
    if (at !== undefined) body['at'] = at;
    return this.request('POST', '/uploadInfo', body);
  }

  downloadInfo(patientId: string, after = 0): Promise<{ items: InfoItem[]; cursor: number }> {
    const params = new URLSearchParams({ patient_id: patientId, after: String(after) });
    return this.request('GET', `/downloadInfo?${params}`);
  }

  listAlerts(after = 0): Promise<{ alerts: AlertEvent[] }> {
    const params = new URLSearchParams({ mode: 'list', after: String(after) });
    return this.request('GET', `/alerts?${params}`);
  }

  enterData(packets: Packet[]): Promise<{
    accepted: number;
    deduped: number;
    rejected: number;
    results: unknown[];
  }> {
    return this.request('POST', '/enterData', { packets });
  }

  /** Stream URL with the token as a query parameter (EventSource-compatible). */
  alertStreamUrl(lastEventId?: number): string {
    const params = new URLSearchParams();
    if (this.token) params.set('token', this.token);
    if (lastEventId !== undefined) params.set('last_event_id', String(lastEventId));
    return `${this.baseUrl}/alerts?${params}`;
  }
}
