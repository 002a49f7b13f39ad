import { describe, expect, it } from 'vitest';

import type { AlertEvent, PacketEntry } from '../src/api.js';
import { activityLabel, renderVitals, sparkline } from '../src/format.js';
import {
  HISTORY_LIMIT,
  ackAlert,
  applyAlert,
  applyVitals,
  initialState,
  latestVitals,
  selectPatient,
  trend,
} from '../src/state.js';

function entry(t: number, spo2 = 95, hr = 70): PacketEntry {
  return {
    packet: { patient_id: 'p-1', t, activity: 1, spo2, hr, lat: 0, lon: 0, flags: [] },
    risk: 0.1,
    severity: null,
    causes: [],
    alert_id: null,
  };
}

function alert(id: number, severity: 'warn' | 'critical' = 'warn', pid = 'p-1'): AlertEvent {
  return {
    id, patient_id: pid, t: id, severity, cause: 'risk_score', risk: 0.6,
    lat: 0, lon: 0, spo2: 95, hr: 70, activity: 1,
  };
}

describe('vitals history', () => {
  it('merges pages by time and dedups overlaps', () => {
    let s = selectPatient(initialState(), 'p-1');
    s = applyVitals(s, [entry(1), entry(2)]);
    s = applyVitals(s, [entry(2), entry(3)]);
    expect(s.vitals.map((e) => e.packet.t)).toEqual([1, 2, 3]);
    expect(latestVitals(s)?.packet.t).toBe(3);
  });

  it('caps history length', () => {
    let s = selectPatient(initialState(), 'p-1');
    s = applyVitals(s, Array.from({ length: HISTORY_LIMIT + 50 }, (_, i) => entry(i)));
    expect(s.vitals).toHaveLength(HISTORY_LIMIT);
    expect(s.vitals[0].packet.t).toBe(50);
  });

  it('extracts trends for the sparklines', () => {
    let s = selectPatient(initialState(), 'p-1');
    s = applyVitals(s, [entry(1, 95, 60), entry(2, 94, 65), entry(3, 93, 70)]);
    expect(trend(s, 'spo2')).toEqual([95, 94, 93]);
    expect(trend(s, 'hr', 2)).toEqual([65, 70]);
  });
});

describe('alert banner lifecycle', () => {
  it('raises the banner on first alert and keeps the most urgent', () => {
    let s = selectPatient(initialState(), 'p-1');
    s = applyAlert(s, alert(1, 'warn'));
    expect(s.banner?.id).toBe(1);
    s = applyAlert(s, alert(2, 'critical'));
    expect(s.banner?.id).toBe(2);
    s = applyAlert(s, alert(3, 'warn')); // newer but less urgent
    expect(s.banner?.id).toBe(2);
  });

  it('acknowledging dismisses and promotes the next unacked alert', () => {
    let s = selectPatient(initialState(), 'p-1');
    s = applyAlert(s, alert(1, 'critical'));
    s = applyAlert(s, alert(2, 'warn'));
    s = ackAlert(s, 1);
    expect(s.banner?.id).toBe(2);
    s = ackAlert(s, 2);
    expect(s.banner).toBeNull();
    // an acked alert never re-raises
    s = applyAlert(s, alert(1, 'critical'));
    expect(s.banner).toBeNull();
  });

  it('ignores alerts for other patients in the banner', () => {
    let s = selectPatient(initialState(), 'p-1');
    s = applyAlert(s, alert(5, 'critical', 'p-other'));
    expect(s.banner).toBeNull();
    expect(s.alerts).toHaveLength(0);
  });

  it('dedups redelivered stream events by id', () => {
    let s = selectPatient(initialState(), 'p-1');
    s = applyAlert(s, alert(1));
    s = applyAlert(s, alert(1));
    expect(s.alerts).toHaveLength(1);
  });
});

describe('rendering helpers', () => {
  it('labels all four activity states', () => {
    expect(activityLabel(1)).toBe('resting');
    expect(activityLabel(4)).toBe('FALLING');
    expect(activityLabel(9)).toBe('state 9');
  });

  it('renders vitals losslessly from the API entry', () => {
    const e = entry(12.5, 91.25, 88.5);
    const r = renderVitals(e);
    expect(r.t).toBe('12.5');
    expect(r.spo2).toBe('91.25%');
    expect(r.hr).toBe('88.5 bpm');
    expect(r.location).toBe('0, 0');
  });

  it('sparkline spans the box and handles flat series', () => {
    expect(sparkline([])).toBe('');
    expect(sparkline([5])).toBe('');
    const points = sparkline([1, 2, 3], 100, 40, 0);
    const xs = points.split(' ').map((p) => Number(p.split(',')[0]));
    expect(xs[0]).toBe(0);
    expect(xs[2]).toBe(100);
    expect(sparkline([7, 7, 7])).not.toBe(''); // flat series: no divide by zero
  });
});
