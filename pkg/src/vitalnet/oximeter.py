"""Pulse-oximeter node: absorbance ratio, oxygen saturation, heart rate.

The ratio R is the log-attenuation of the red channel over the infrared
channel, computed from window-mean intensities. Saturation follows from R and
the four extinction coefficients; heart rate from the spacing of infrared
intensity peaks. Outputs are clamped to the reportable ranges (0-97% SpO2,
30-245 bpm) with quality flags rather than rejected, since a monitoring node
must keep streaming.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy.signal import find_peaks

from vitalnet.scenario import HR_MAX, HR_MIN, SPO2_MAX
from vitalnet.synth import OpticalConstants, PpgTrace

MIN_WINDOW_S = 4.0  # two periods of the slowest reportable rate
REFRACTORY_S = 60.0 / HR_MAX  # minimum credible peak spacing
SINGULARITY_EPS = 1e-12


class SignalQualityError(ValueError):
    """Window intensities unusable (nonpositive, or zero log denominator)."""


class SingularityError(ArithmeticError):
    """Saturation denominator within epsilon of zero for this R."""


class Quality(enum.Flag):
    NONE = 0
    CLAMPED_LOW = enum.auto()
    CLAMPED_HIGH = enum.auto()
    TOO_FEW_PEAKS = enum.auto()

    def names(self) -> list[str]:
        flags = (Quality.CLAMPED_LOW, Quality.CLAMPED_HIGH, Quality.TOO_FEW_PEAKS)
        return [f.name.lower() for f in flags if f in self]


@dataclass
class PpgWindow:
    """A slice of the two-channel intensity stream plus incident intensities."""

    t: np.ndarray
    i1: np.ndarray
    i2: np.ndarray
    i_in1: float
    i_in2: float

    def __post_init__(self) -> None:
        if self.t.size < 2:
            raise ValueError("window needs at least two samples")
        dur = float(self.t.size * (self.t[1] - self.t[0]))
        if dur < MIN_WINDOW_S - 1e-9:
            raise ValueError(
                f"window spans {dur:.2f}s; need >= {MIN_WINDOW_S:g}s so two peaks "
                f"fit at {HR_MIN:g} bpm"
            )

    @property
    def fs(self) -> float:
        return 1.0 / float(self.t[1] - self.t[0])


@dataclass(frozen=True)
class OxiReading:
    t: float
    spo2: float | None  # percent, [0, 97]
    hr: float | None  # bpm, [30, 245]
    quality: Quality = Quality.NONE

    def flag_names(self) -> list[str]:
        return self.quality.names()


def compute_ratio(w: PpgWindow) -> float:
    """Absorbance ratio R from window-mean intensities.

    R = log10(mean(I1)/I_in1) / log10(mean(I2)/I_in2).
    """
    if np.any(w.i1 <= 0) or np.any(w.i2 <= 0):
        raise SignalQualityError("nonpositive intensity in window")
    m1 = float(w.i1.mean())
    m2 = float(w.i2.mean())
    denom = math.log10(m2 / w.i_in2)
    if abs(denom) < SINGULARITY_EPS:
        raise SignalQualityError("infrared channel carries no attenuation")
    return math.log10(m1 / w.i_in1) / denom


def saturation_raw(r: float, c: OpticalConstants) -> float:
    """Unclamped saturation fraction:
    (alpha_r2*R - alpha_r1) / ((alpha_r2 - alpha_o2)*R - (alpha_r1 - alpha_o1)).
    """
    denom = (c.alpha_r2 - c.alpha_o2) * r - (c.alpha_r1 - c.alpha_o1)
    if abs(denom) <= SINGULARITY_EPS:
        raise SingularityError(f"saturation undefined at R={r}")
    return (c.alpha_r2 * r - c.alpha_r1) / denom


def compute_spo2(r: float, c: OpticalConstants) -> tuple[float, Quality]:
    """Oxygen saturation fraction from the ratio R, clamped to [0, 0.97]."""
    raw = saturation_raw(r, c)
    if raw < 0.0:
        return 0.0, Quality.CLAMPED_LOW
    if raw > SPO2_MAX:
        return SPO2_MAX, Quality.CLAMPED_HIGH
    return raw, Quality.NONE


def clamp_hr(raw_bpm: float) -> tuple[float, Quality]:
    """Clamp a raw rate estimate to the reportable band, flagging when clamped."""
    if raw_bpm < HR_MIN:
        return HR_MIN, Quality.CLAMPED_LOW
    if raw_bpm > HR_MAX:
        return HR_MAX, Quality.CLAMPED_HIGH
    return raw_bpm, Quality.NONE


def detect_hr(
    w: PpgWindow, k: float = 0.5, smooth_s: float = 0.12
) -> tuple[float | None, Quality]:
    """Heart rate from infrared peak spacing: 60 / mean inter-peak interval.

    The channel is lightly smoothed (normalized boxcar, ``smooth_s`` wide),
    then peaks are local maxima above mean + k*std separated by at least the
    refractory interval. Fewer than two surviving peaks yields no rate and the
    too_few_peaks flag. The estimate is invariant to uniform scaling of I2.
    """
    x = np.asarray(w.i2, dtype=float)
    n_k = int(round(smooth_s * w.fs))
    if n_k > 1:
        kernel = np.ones(n_k)
        coverage = np.convolve(np.ones_like(x), kernel, mode="same")
        x = np.convolve(x, kernel, mode="same") / coverage
    threshold = float(x.mean() + k * x.std())
    distance = max(1, int(math.floor(REFRACTORY_S * w.fs)))
    peaks, _ = find_peaks(x, height=threshold, distance=distance)
    if peaks.size < 2:
        return None, Quality.TOO_FEW_PEAKS
    intervals = np.diff(w.t[peaks])
    raw = 60.0 / float(intervals.mean())
    return clamp_hr(raw)


@dataclass
class OximeterNode:
    """Streams a PPG trace through fixed windows, emitting one reading each.

    The window length trades latency for low-rate resolution; the default 8s
    holds at least three peaks at the slowest reportable rate.
    """

    constants: OpticalConstants = field(default_factory=OpticalConstants)
    window_s: float = 8.0
    peak_k: float = 0.5

    def __post_init__(self) -> None:
        self.constants.validate()
        if self.window_s < MIN_WINDOW_S:
            raise ValueError(f"window_s must be >= {MIN_WINDOW_S:g}")

    def process(self, trace: PpgTrace) -> Iterator[OxiReading]:
        n_win = int(round(self.window_s * trace.fs))
        for start in range(0, len(trace) - n_win + 1, n_win):
            sl = slice(start, start + n_win)
            w = PpgWindow(
                t=trace.t[sl], i1=trace.i1[sl], i2=trace.i2[sl],
                i_in1=trace.i_in1, i_in2=trace.i_in2,
            )
            t_end = float(trace.t[sl][-1]) + 1.0 / trace.fs
            quality = Quality.NONE
            spo2_pct: float | None = None
            try:
                r = compute_ratio(w)
                frac, q_s = compute_spo2(r, self.constants)
                spo2_pct = frac * 100.0
                quality |= q_s
            except (SignalQualityError, SingularityError):
                pass
            hr, q_h = detect_hr(w, self.peak_k)
            quality |= q_h
            yield OxiReading(t=t_end, spo2=spo2_pct, hr=hr, quality=quality)
