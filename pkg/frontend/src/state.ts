// Console store: vitals history, alert feed, and banner lifecycle.
// Pure data + reducers; the DOM layer subscribes and re-renders.

import type { AlertEvent, PacketEntry } from './api.js';

export const HISTORY_LIMIT = 300;

export interface ConsoleState {
  patientId: string | null;
  vitals: PacketEntry[]; // time-ordered, capped at HISTORY_LIMIT
  alerts: AlertEvent[]; // every alert seen this session, by id
  banner: AlertEvent | null; // most urgent un-acknowledged alert
  acked: Set<number>;
  streamHealthy: boolean;
  lastError: string | null;
}

export function initialState(): ConsoleState {
  return {
    patientId: null,
    vitals: [],
    alerts: [],
    banner: null,
    acked: new Set(),
    streamHealthy: false,
    lastError: null,
  };
}

export function selectPatient(state: ConsoleState, patientId: string): ConsoleState {
  return { ...initialState(), patientId, acked: new Set(), streamHealthy: state.streamHealthy };
}

/** Merge a collectData page: replace overlapping times, keep order, cap length. */
export function applyVitals(state: ConsoleState, page: PacketEntry[]): ConsoleState {
  if (page.length === 0) return state;
  const byT = new Map<number, PacketEntry>();
  for (const entry of state.vitals) byT.set(entry.packet.t, entry);
  for (const entry of page) byT.set(entry.packet.t, entry);
  const vitals = [...byT.values()].sort((a, b) => a.packet.t - b.packet.t);
  return { ...state, vitals: vitals.slice(-HISTORY_LIMIT) };
}

function moreUrgent(a: AlertEvent, b: AlertEvent | null): boolean {
  if (b === null) return true;
  if (a.severity !== b.severity) return a.severity === 'critical';
  return a.id > b.id;
}

/** Record one stream alert; it becomes the banner unless already acked. */
export function applyAlert(state: ConsoleState, alert: AlertEvent): ConsoleState {
  if (state.patientId !== null && alert.patient_id !== state.patientId) {
    return state; // other patients stay out of this panel's banner
  }
  const known = state.alerts.some((a) => a.id === alert.id);
  const alerts = known ? state.alerts : [...state.alerts, alert].sort((a, b) => a.id - b.id);
  let banner = state.banner;
  if (!state.acked.has(alert.id) && moreUrgent(alert, banner)) {
    banner = alert;
  }
  return { ...state, alerts, banner };
}

/** Acknowledge the banner alert: dismissed locally, never re-raised. */
export function ackAlert(state: ConsoleState, alertId: number): ConsoleState {
  const acked = new Set(state.acked);
  acked.add(alertId);
  const candidates = state.alerts.filter((a) => !acked.has(a.id));
  let banner: AlertEvent | null = null;
  for (const alert of candidates) {
    if (moreUrgent(alert, banner)) banner = alert;
  }
  return { ...state, acked, banner };
}

export function latestVitals(state: ConsoleState): PacketEntry | null {
  return state.vitals.length > 0 ? state.vitals[state.vitals.length - 1] : null;
}

export function trend(state: ConsoleState, key: 'spo2' | 'hr', n = 120): number[] {
  return state.vitals.slice(-n).map((entry) => entry.packet[key]);
}

export function setStreamHealth(state: ConsoleState, healthy: boolean): ConsoleState {
  return { ...state, streamHealthy: healthy };
}

export function setError(state: ConsoleState, message: string | null): ConsoleState {
  return { ...state, lastError: message };
}
