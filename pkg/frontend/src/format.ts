// Pure rendering helpers, kept separate from the DOM so the displayed values
// can be spot-checked against raw API responses in tests.

import type { AlertEvent, PacketEntry } from './api.js';

export const ACTIVITY_LABELS: Record<number, string> = {
  1: 'resting',
  2: 'walking',
  3: 'running',
  4: 'FALLING',
};

export function activityLabel(activity: number): string {
  return ACTIVITY_LABELS[activity] ?? `state ${activity}`;
}

export interface RenderedVitals {
  t: string;
  activity: string;
  spo2: string;
  hr: string;
  risk: string;
  location: string;
  flags: string;
}

/** Exact, lossless rendering of one collectData entry. */
export function renderVitals(entry: PacketEntry): RenderedVitals {
  const p = entry.packet;
  return {
    t: `${p.t}`,
    activity: activityLabel(p.activity),
    spo2: `${p.spo2}%`,
    hr: `${p.hr} bpm`,
    risk: entry.risk.toFixed(3),
    location: `${p.lat}, ${p.lon}`,
    flags: (p.flags ?? []).join(', '),
  };
}

export function alertLine(alert: AlertEvent): string {
  return (
    `#${alert.id} t=${alert.t} ${alert.severity.toUpperCase()} ` +
    `(${alert.cause}) ${alert.patient_id} @ ${alert.lat}, ${alert.lon}`
  );
}

/** SVG polyline points for a fixed-size sparkline; empty when < 2 samples. */
export function sparkline(
  values: number[],
  width = 220,
  height = 48,
  pad = 2,
): string {
  if (values.length < 2) return '';
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  const step = (width - 2 * pad) / (values.length - 1);
  return values
    .map((v, i) => {
      const x = pad + i * step;
      const y = height - pad - ((v - lo) / span) * (height - 2 * pad);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(' ');
}
