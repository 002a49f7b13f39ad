"""Deterministic synthetic physiology: accelerometer traces and two-channel PPG.

Acts as the ground-truth oracle for the node pipelines. Accelerometer traces
carry a +1g vertical baseline plus per-state excursion envelopes sized to sit
well inside the activity classifier's decision bands; falling and running put
their energy on the vertical axis, resting and walking on the horizontal pair.
PPG streams follow the two-wavelength light-absorption forward model exactly,
with a raised-cosine cardiac pulse riding on total hemoglobin concentration so
saturation stays constant while the infrared channel peaks once per beat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from vitalnet.accel import AccelSample, RangeSetting, StateId
from vitalnet.scenario import ScenarioScript

FS_ACCEL_MIN = 10.0
FS_ACCEL_MAX = 100.0

# Per-state envelope amplitudes in g (deviation from gravity) and tone
# frequencies in Hz. Horizontal-dominant states excite x/y, vertical-dominant
# states excite z, always leaving >= 70% of excursion energy on the dominant
# side and the windowed maximum >= 25% of band width away from both band edges.
_ENVELOPES: dict[int, dict[str, float]] = {
    int(StateId.RESTING): {"x": 0.05, "y": 0.03, "z": 0.02, "freq": 0.5},
    int(StateId.WALKING): {"x": 0.40, "y": 0.20, "z": 0.15, "freq": 2.0},
    int(StateId.RUNNING): {"x": 0.30, "y": 0.20, "z": 1.60, "freq": 3.0},
}

# Fall signature, repeated once per second of a falling segment: a vertical
# spike rising over SPIKE_RAMP_S, holding SPIKE_PEAK_G for SPIKE_FLAT_S
# (wider than one sample period at the minimum rate, so the sampled maximum
# is exact), then decaying to quiescence for the rest of the second.
SPIKE_PEAK_G = 3.5
SPIKE_RAMP_S = 0.15
SPIKE_FLAT_S = 0.20
_FALL_WIGGLE = {"x": 0.02, "y": 0.02, "z": 0.02, "freq": 0.5}


@dataclass
class AccelTrace:
    """Ground-truth triaxial trace in g at a fixed sampling rate."""

    fs: float
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def samples(self):
        for i in range(self.t.size):
            yield AccelSample(
                t=float(self.t[i]), x=float(self.x[i]),
                y=float(self.y[i]), z=float(self.z[i]),
            )

    def __len__(self) -> int:
        return int(self.t.size)


@dataclass(frozen=True)
class OpticalConstants:
    """Extinction coefficients, path length and incident intensities.

    ``alpha_o*`` belong to the oxygen-bound species, ``alpha_r*`` to the
    reduced species; wavelength 1 is the red channel, wavelength 2 infrared.
    The red/infrared asymmetry (alpha_r1 > alpha_o1, alpha_o2 > alpha_r2) is
    what makes the absorbance ratio carry saturation information.
    """

    alpha_o1: float = 0.1
    alpha_r1: float = 0.8
    alpha_o2: float = 0.3
    alpha_r2: float = 0.1
    path_length_l: float = 1.0
    i_in1: float = 1.0
    i_in2: float = 1.0

    def validate(self) -> None:
        vals = (
            self.alpha_o1, self.alpha_r1, self.alpha_o2, self.alpha_r2,
            self.path_length_l, self.i_in1, self.i_in2,
        )
        if any(v <= 0 for v in vals):
            raise ValueError("optical constants must all be strictly positive")
        if not (self.alpha_r1 > self.alpha_o1 and self.alpha_o2 > self.alpha_r2):
            raise ValueError(
                "red/infrared asymmetry violated: need alpha_r1 > alpha_o1 "
                "and alpha_o2 > alpha_r2"
            )


@dataclass(frozen=True)
class PulseModel:
    """Cardiac pulse riding on total concentration: c_tot(t) = c_tot*(1+depth*p(t)).

    p(t) = ((1 + cos(2*pi*f*t))/2)**sharpness peaks at the start of each beat,
    so infrared intensity maxima land at odd multiples of half a period and are
    spaced exactly one period apart. The small default depth keeps window-mean
    ratio inversion exact to well below 1e-6 in saturation.
    """

    c_tot: float = 1.0
    depth: float = 1e-3
    sharpness: int = 2


@dataclass
class PpgTrace:
    """Two-channel transmitted-intensity stream plus its incident intensities."""

    fs: float
    t: np.ndarray
    i1: np.ndarray
    i2: np.ndarray
    i_in1: float
    i_in2: float

    def __len__(self) -> int:
        return int(self.t.size)


def _segment_slices(script: ScenarioScript, fs: float) -> list[tuple[int, int, float]]:
    """(start index, end index, segment start time) per segment on the fs grid."""
    out = []
    bounds = script.boundaries()
    for i in range(len(script.segments)):
        i0 = math.ceil(bounds[i] * fs - 1e-9)
        i1 = math.ceil(bounds[i + 1] * fs - 1e-9)
        out.append((i0, i1, bounds[i]))
    return out


def gen_accel_trace(script: ScenarioScript, fs: float) -> AccelTrace:
    """Generate the triaxial trace for a scenario at ``fs`` Hz.

    Tones use cosine phase anchored to each segment's start so wake-tick
    samples see the full envelope amplitude when segments start on whole
    seconds. Falling segments repeat the spike-plus-quiescence signature once
    per second.
    """
    if not FS_ACCEL_MIN <= fs <= FS_ACCEL_MAX:
        raise ValueError(f"fs must be within [{FS_ACCEL_MIN:g}, {FS_ACCEL_MAX:g}] Hz, got {fs}")
    script.validate()
    n = math.ceil(script.total_duration_s * fs - 1e-9)
    t = np.arange(n) / fs
    dev = {a: np.zeros(n) for a in ("x", "y", "z")}
    for (i0, i1, t0), seg in zip(_segment_slices(script, fs), script.segments):
        tau = t[i0:i1] - t0
        if seg.activity == StateId.FALLING:
            env = _FALL_WIGGLE
            u = np.mod(tau, 1.0)  # one spike per second of the segment
            spike = np.zeros_like(u)
            ramp_up = u < SPIKE_RAMP_S
            flat = (u >= SPIKE_RAMP_S) & (u < SPIKE_RAMP_S + SPIKE_FLAT_S)
            down = (u >= SPIKE_RAMP_S + SPIKE_FLAT_S) & (u < 2 * SPIKE_RAMP_S + SPIKE_FLAT_S)
            spike[ramp_up] = SPIKE_PEAK_G * np.sin(np.pi * u[ramp_up] / (2 * SPIKE_RAMP_S)) ** 2
            spike[flat] = SPIKE_PEAK_G
            spike[down] = SPIKE_PEAK_G * np.sin(
                np.pi * (2 * SPIKE_RAMP_S + SPIKE_FLAT_S - u[down]) / (2 * SPIKE_RAMP_S)
            ) ** 2
            tone = np.cos(2 * np.pi * env["freq"] * tau)
            dev["x"][i0:i1] = env["x"] * tone
            dev["y"][i0:i1] = env["y"] * tone
            dev["z"][i0:i1] = spike + env["z"] * tone * (spike == 0)
        else:
            env = _ENVELOPES[seg.activity]
            tone = np.cos(2 * np.pi * env["freq"] * tau)
            dev["x"][i0:i1] = env["x"] * tone
            dev["y"][i0:i1] = env["y"] * tone
            dev["z"][i0:i1] = env["z"] * tone
    sigma = script.noise.get("accel", 0.0)
    if sigma > 0:
        rng = np.random.default_rng([script.seed, 0])
        for a in ("x", "y", "z"):
            dev[a] = dev[a] + rng.normal(0.0, sigma, n)
    return AccelTrace(fs=fs, t=t, x=dev["x"], y=dev["y"], z=dev["z"] + 1.0)


def gen_ppg(
    script: ScenarioScript,
    constants: OpticalConstants = OpticalConstants(),
    fs: float = 100.0,
    pulse: PulseModel = PulseModel(),
) -> PpgTrace:
    """Generate the two-channel PPG intensity stream for a scenario.

    Per segment, saturation is held at ``spo2_true`` while total concentration
    pulses at ``hr_true``; intensities then follow the absorption law exactly,
    before optional additive noise. Requires fs >= 4 beats-per-second for the
    fastest segment so peaks stay resolvable.
    """
    constants.validate()
    script.validate()
    for seg in script.segments:
        if fs < 4.0 * seg.hr_true / 60.0:
            raise ValueError(
                f"fs={fs} too low to resolve hr={seg.hr_true} bpm "
                f"(need >= {4.0 * seg.hr_true / 60.0:g} Hz)"
            )
    n = math.ceil(script.total_duration_s * fs - 1e-9)
    t = np.arange(n) / fs
    i1 = np.empty(n)
    i2 = np.empty(n)
    c = constants
    for (i0, i1x, t0), seg in zip(_segment_slices(script, fs), script.segments):
        tau = t[i0:i1x] - t0
        f = seg.hr_true / 60.0
        p = ((1.0 + np.cos(2 * np.pi * f * tau)) / 2.0) ** pulse.sharpness
        c_tot = pulse.c_tot * (1.0 + pulse.depth * p)
        s = seg.spo2_true
        co = s * c_tot
        cr = (1.0 - s) * c_tot
        i1[i0:i1x] = c.i_in1 * 10.0 ** (-(c.alpha_o1 * co + c.alpha_r1 * cr) * c.path_length_l)
        i2[i0:i1x] = c.i_in2 * 10.0 ** (-(c.alpha_o2 * co + c.alpha_r2 * cr) * c.path_length_l)
    sigma = script.noise.get("ppg", 0.0)
    if sigma > 0:
        rng = np.random.default_rng([script.seed, 1])
        i1 = i1 + rng.normal(0.0, sigma * float(i1.mean()), n)
        i2 = i2 + rng.normal(0.0, sigma * float(i2.mean()), n)
        # intensities stay physical even under extreme noise draws
        i1 = np.maximum(i1, 1e-9 * c.i_in1)
        i2 = np.maximum(i2, 1e-9 * c.i_in2)
    return PpgTrace(fs=fs, t=t, i1=i1, i2=i2, i_in1=c.i_in1, i_in2=c.i_in2)
