// DOM wiring for the practitioner console. All data shown here is fetched
// from the record server; the store only reorganizes it for display.

import { ApiClient, ApiError, type AlertEvent, type InfoKind } from './api.js';
import { SseStream } from './sse.js';
import { activityLabel, alertLine, renderVitals, sparkline } from './format.js';
import {
  ackAlert,
  applyAlert,
  applyVitals,
  initialState,
  latestVitals,
  selectPatient,
  setError,
  setStreamHealth,
  trend,
  type ConsoleState,
} from './state.js';

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

let api: ApiClient | null = null;
let state: ConsoleState = initialState();
let stream: SseStream | null = null;
let pollTimer: number | null = null;

function update(next: ConsoleState): void {
  state = next;
  render();
}

function render(): void {
  const authed = api?.token != null;
  $('login-panel').style.display = authed ? 'none' : 'block';
  $('console-panel').style.display = authed ? 'block' : 'none';
  $('error-box').textContent = state.lastError ?? '';
  $('stream-state').textContent = state.streamHealthy ? 'stream: live' : 'stream: reconnecting';
  $('stream-state').className = state.streamHealthy ? 'ok' : 'warn';

  const banner = $('alert-banner');
  if (state.banner) {
    banner.style.display = 'flex';
    banner.className = `banner ${state.banner.severity}`;
    $('alert-text').textContent = alertLine(state.banner);
  } else {
    banner.style.display = 'none';
  }

  const latest = latestVitals(state);
  if (latest) {
    const r = renderVitals(latest);
    $('v-activity').textContent = r.activity;
    $('v-spo2').textContent = r.spo2;
    $('v-hr').textContent = r.hr;
    $('v-risk').textContent = r.risk;
    $('v-loc').textContent = r.location;
    $('v-t').textContent = `t = ${r.t} s`;
    $('v-flags').textContent = r.flags;
  }
  ($('spark-spo2') as unknown as SVGPolylineElement).setAttribute(
    'points',
    sparkline(trend(state, 'spo2')),
  );
  ($('spark-hr') as unknown as SVGPolylineElement).setAttribute(
    'points',
    sparkline(trend(state, 'hr')),
  );

  const feed = $('alert-feed');
  feed.innerHTML = '';
  for (const alert of [...state.alerts].reverse().slice(0, 50)) {
    const li = document.createElement('li');
    li.textContent = alertLine(alert) + (state.acked.has(alert.id) ? ' (acked)' : '');
    li.className = alert.severity;
    feed.appendChild(li);
  }
}

function onAuthFailure(error: unknown): boolean {
  if (error instanceof ApiError && error.authExpired) {
    stopSession();
    api?.logout();
    update(setError(state, 'session expired, log in again'));
    return true;
  }
  return false;
}

async function poll(): Promise<void> {
  if (!api || !state.patientId) return;
  try {
    const last = latestVitals(state)?.packet.t;
    const resp = await api.collectData(state.patientId, {
      tStart: last !== undefined ? last + 1e-9 : undefined,
      limit: 500,
    });
    update(setError(applyVitals(state, resp.packets), null));
  } catch (error) {
    if (!onAuthFailure(error)) {
      update(setError(state, `poll failed: ${String(error)}`));
    }
  }
}

function startStream(): void {
  if (!api) return;
  stream = new SseStream((lastId) => api!.alertStreamUrl(lastId), {
    onEvent: (event) => {
      const alert = JSON.parse(event.data) as AlertEvent;
      update(setStreamHealth(applyAlert(state, alert), true));
    },
    onDrop: () => update(setStreamHealth(state, false)),
    retryMs: 1500,
  });
  void stream.run();
}

function stopSession(): void {
  stream?.stop();
  stream = null;
  if (pollTimer !== null) {
    clearInterval(pollTimer);
    pollTimer = null;
  }
}

async function onLogin(event: Event): Promise<void> {
  event.preventDefault();
  const url = ($('server-url') as HTMLInputElement).value;
  const principal = ($('principal') as HTMLInputElement).value;
  const password = ($('password') as HTMLInputElement).value;
  api = new ApiClient(url);
  try {
    const session = await api.login(principal, password);
    if (session.role !== 'practitioner') {
      api.logout();
      update(setError(state, 'this console is for practitioners'));
      return;
    }
    update(setError(state, null));
    startStream();
    pollTimer = setInterval(() => void poll(), 1000) as unknown as number;
  } catch (error) {
    api.logout();
    update(setError(state, `login failed: ${String(error)}`));
  }
}

async function onSelectPatient(event: Event): Promise<void> {
  event.preventDefault();
  const pid = ($('patient-id') as HTMLInputElement).value.trim();
  if (!api || !pid) return;
  try {
    await api.patient(pid); // 404 surfaces before we flip the panel
    update(selectPatient(state, pid));
    $('patient-title').textContent = pid;
    await poll();
    const alerts = await api.listAlerts();
    let next = state;
    for (const alert of alerts.alerts) next = applyAlert(next, alert);
    update(next);
  } catch (error) {
    if (!onAuthFailure(error)) update(setError(state, `patient: ${String(error)}`));
  }
}

async function onPushInfo(event: Event): Promise<void> {
  event.preventDefault();
  if (!api || !state.patientId) return;
  const kind = ($('info-kind') as HTMLSelectElement).value as InfoKind;
  const text = ($('info-text') as HTMLTextAreaElement).value.trim();
  const atRaw = ($('info-at') as HTMLInputElement).value;
  if (!text) {
    update(setError(state, 'info text must not be empty'));
    return;
  }
  try {
    const resp = await api.uploadInfo(
      state.patientId,
      kind,
      text,
      kind === 'consultation_slot' && atRaw ? Number(atRaw) : undefined,
    );
    ($('info-text') as HTMLTextAreaElement).value = '';
    const toast = $('toast');
    toast.textContent = `uploaded ${kind} #${resp.item_id}`;
    toast.style.display = 'block';
    setTimeout(() => (toast.style.display = 'none'), 4000);
  } catch (error) {
    if (!onAuthFailure(error)) update(setError(state, `upload: ${String(error)}`));
  }
}

function onLogout(): void {
  stopSession();
  api?.logout();
  update(initialState());
}

function onAck(): void {
  if (state.banner) update(ackAlert(state, state.banner.id));
}

export function boot(): void {
  $('login-form').addEventListener('submit', (e) => void onLogin(e));
  $('patient-form').addEventListener('submit', (e) => void onSelectPatient(e));
  $('info-form').addEventListener('submit', (e) => void onPushInfo(e));
  $('logout').addEventListener('click', onLogout);
  $('ack').addEventListener('click', onAck);
  render();
}

if (typeof document !== 'undefined') {
  window.addEventListener('DOMContentLoaded', boot);
}
