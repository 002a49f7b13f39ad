import math

import numpy as np
import pytest

from vitalnet.oximeter import (
    OximeterNode,
    PpgWindow,
    Quality,
    SignalQualityError,
    SingularityError,
    clamp_hr,
    compute_ratio,
    compute_spo2,
    detect_hr,
)
from vitalnet.scenario import LatLon, ScenarioScript, Segment
from vitalnet.synth import OpticalConstants, gen_ppg

LOC = LatLon(0, 0)


def one_segment(dur=8.0, spo2=0.90, hr=72.0, seed=0, noise=None):
    return ScenarioScript(
        seed=seed,
        segments=[Segment(duration_s=dur, activity=1, spo2_true=spo2, hr_true=hr, location=LOC)],
        noise=dict(noise or {}),
    )


def window_from(trace):
    return PpgWindow(t=trace.t, i1=trace.i1, i2=trace.i2, i_in1=trace.i_in1, i_in2=trace.i_in2)


def flat_window(i1=0.1, i2=0.1, n=800, fs=100.0):
    t = np.arange(n) / fs
    return PpgWindow(
        t=t, i1=np.full(n, i1), i2=np.full(n, i2), i_in1=1.0, i_in2=1.0
    )


# ----------------------------------------------------------------------- ratio


def test_ratio_equal_attenuations_is_one():
    assert compute_ratio(flat_window(0.1, 0.1)) == pytest.approx(1.0, abs=1e-12)


def test_ratio_log_ratio_two():
    assert compute_ratio(flat_window(0.01, 0.1)) == pytest.approx(2.0, abs=1e-12)


def test_ratio_rejects_nonpositive_intensity():
    w = flat_window()
    w.i1[3] = -0.5
    with pytest.raises(SignalQualityError):
        compute_ratio(w)


def test_ratio_rejects_zero_denominator():
    with pytest.raises(SignalQualityError):
        compute_ratio(flat_window(0.5, 1.0))  # infrared unattenuated


def test_single_species_ratio_is_extinction_quotient():
    # C_r = 0 limit built directly from the absorption law
    c = OpticalConstants(alpha_o1=0.1, alpha_r1=0.8, alpha_o2=0.3, alpha_r2=0.1)
    n = 800
    t = np.arange(n) / 100.0
    co = np.full(n, 1.0)
    i1 = c.i_in1 * 10.0 ** (-c.alpha_o1 * co * c.path_length_l)
    i2 = c.i_in2 * 10.0 ** (-c.alpha_o2 * co * c.path_length_l)
    w = PpgWindow(t=t, i1=i1, i2=i2, i_in1=c.i_in1, i_in2=c.i_in2)
    assert compute_ratio(w) == pytest.approx(c.alpha_o1 / c.alpha_o2, abs=1e-9)


# ------------------------------------------------------------------ saturation


def test_endpoint_identities_default_constants():
    c = OpticalConstants()
    sat, q = compute_spo2(c.alpha_o1 / c.alpha_o2, c)
    # algebraic endpoint: pure oxygenated species gives saturation exactly 1,
    # clamped to the 0.97 reporting ceiling
    assert sat == pytest.approx(0.97, abs=1e-12)
    assert q is Quality.CLAMPED_HIGH
    sat0, q0 = compute_spo2(c.alpha_r1 / c.alpha_r2, c)
    assert sat0 == pytest.approx(0.0, abs=1e-9)
    assert q0 in (Quality.NONE, Quality.CLAMPED_LOW)


def test_endpoint_identities_random_constants():
    rng = np.random.default_rng(17)
    for _ in range(100):
        ao1 = rng.uniform(0.05, 0.5)
        ar1 = rng.uniform(ao1 * 1.5, 2.0)
        ar2 = rng.uniform(0.05, 0.5)
        ao2 = rng.uniform(ar2 * 1.5, 2.0)
        c = OpticalConstants(alpha_o1=ao1, alpha_r1=ar1, alpha_o2=ao2, alpha_r2=ar2)
        c.validate()
        denom = (c.alpha_r2 - c.alpha_o2) * (ao1 / ao2) - (c.alpha_r1 - c.alpha_o1)
        raw_one = (c.alpha_r2 * (ao1 / ao2) - c.alpha_r1) / denom
        assert raw_one == pytest.approx(1.0, abs=1e-9)
        sat0, _ = compute_spo2(ar1 / ar2, c)
        assert sat0 == pytest.approx(0.0, abs=1e-9)


def test_monotone_decreasing_in_ratio():
    c = OpticalConstants()
    lo = c.alpha_o1 / c.alpha_o2
    hi = c.alpha_r1 / c.alpha_r2
    grid = np.linspace(lo, hi, 2000)
    vals = []
    for r in grid:
        denom = (c.alpha_r2 - c.alpha_o2) * r - (c.alpha_r1 - c.alpha_o1)
        vals.append((c.alpha_r2 * r - c.alpha_r1) / denom)
    diffs = np.diff(vals)
    assert np.all(diffs < 0)


def test_singularity_detected():
    c = OpticalConstants()
    r_sing = -(c.alpha_r1 - c.alpha_o1) / (c.alpha_r2 - c.alpha_o2) * -1.0
    # solve (ar2-ao2)*r = (ar1-ao1)
    r_sing = (c.alpha_r1 - c.alpha_o1) / (c.alpha_r2 - c.alpha_o2)
    with pytest.raises(SingularityError):
        compute_spo2(r_sing, c)


@pytest.mark.parametrize("spo2_true", [0.05, 0.50, 0.90, 0.97])
def test_round_trip_through_forward_model(spo2_true):
    c = OpticalConstants()
    trace = gen_ppg(one_segment(spo2=spo2_true), c, fs=100)
    r = compute_ratio(window_from(trace))
    sat, _ = compute_spo2(r, c)
    assert sat == pytest.approx(spo2_true, abs=1e-6)


# ------------------------------------------------------------------ heart rate


def synthetic_peak_window(period_s, dur_s=12.0, fs=100.0):
    t = np.arange(int(dur_s * fs)) / fs
    base = np.full(t.size, 0.5)
    # narrow triangular pulses centered on multiples of the period
    for k in range(1, int(dur_s / period_s)):
        center = int(round(k * period_s * fs))
        if 1 <= center < t.size - 1:
            base[center] += 0.2
            base[center - 1] += 0.1
            base[center + 1] += 0.1
    return PpgWindow(t=t, i1=base.copy(), i2=base, i_in1=1.0, i_in2=1.0)


def test_hr_from_exact_peak_spacing():
    hr, q = detect_hr(synthetic_peak_window(1.0))
    assert hr == pytest.approx(60.0, abs=1e-9)
    assert q is Quality.NONE


def test_hr_fast_peaks():
    hr, q = detect_hr(synthetic_peak_window(0.25))
    assert hr == pytest.approx(240.0, abs=1e-9)
    assert q is Quality.NONE


def test_hr_from_forward_model():
    # sigma small relative to the pulse swing (~8.5e-4 of the mean intensity)
    trace = gen_ppg(one_segment(dur=10, hr=72, seed=2, noise={"ppg": 5e-5}), fs=100)
    hr, q = detect_hr(window_from(trace))
    assert hr == pytest.approx(72.0, abs=1.0)


def test_hr_scale_invariance():
    w = synthetic_peak_window(0.8)
    hr1, _ = detect_hr(w)
    w2 = PpgWindow(t=w.t, i1=w.i1, i2=w.i2 * 1000.0, i_in1=w.i_in1, i_in2=w.i_in2)
    hr2, _ = detect_hr(w2)
    assert hr1 == pytest.approx(hr2, abs=1e-9)


def test_too_few_peaks_flag():
    t = np.arange(800) / 100.0
    x = np.full(t.size, 0.5)
    x[400] = 0.9  # single peak
    w = PpgWindow(t=t, i1=x.copy(), i2=x, i_in1=1.0, i_in2=1.0)
    hr, q = detect_hr(w)
    assert hr is None
    assert q is Quality.TOO_FEW_PEAKS


def test_clamp_flags():
    hr, q = clamp_hr(25.0)
    assert hr == 30.0 and q is Quality.CLAMPED_LOW
    hr, q = clamp_hr(250.0)
    assert hr == 245.0 and q is Quality.CLAMPED_HIGH
    hr, q = clamp_hr(72.0)
    assert hr == 72.0 and q is Quality.NONE


def test_slow_peaks_clamp_low():
    # peaks 2.4s apart: raw 25 bpm, clamped up to the reporting floor
    hr, q = detect_hr(synthetic_peak_window(2.4))
    assert hr == 30.0
    assert q is Quality.CLAMPED_LOW


def test_window_duration_enforced():
    t = np.arange(200) / 100.0  # 2 s
    with pytest.raises(ValueError):
        PpgWindow(t=t, i1=np.ones(200), i2=np.ones(200), i_in1=1, i_in2=1)


# ------------------------------------------------------------------- node loop


def test_node_emits_one_reading_per_window():
    trace = gen_ppg(one_segment(dur=24, spo2=0.9, hr=60), fs=100)
    node = OximeterNode()
    readings = list(node.process(trace))
    assert len(readings) == 3
    for reading in readings:
        assert reading.spo2 == pytest.approx(90.0, abs=1e-4)
        assert reading.hr == pytest.approx(60.0, abs=1.0)
        assert reading.quality is Quality.NONE
