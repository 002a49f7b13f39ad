"""Wearable accelerometer node: adaptive-range sampling and activity states.

The node sleeps by default, waking once per second to take a single low-range
sample. A deviation above the activation threshold switches it to active
sampling at the full rate. Measurements are quantized at a per-axis adaptive
range, summarized over tumbling 1-second windows into per-axis maxima, and
classified into four states: 1 resting, 2 walking/general movement, 3 running,
4 falling. Sustained inactivity puts the node back to sleep.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

GRAVITY_VECTOR = (0.0, 0.0, 1.0)  # node frame: vertical axis carries +1g at rest

AXES = ("x", "y", "z")


class StateId(enum.IntEnum):
    RESTING = 1
    WALKING = 2
    RUNNING = 3
    FALLING = 4


class RangeSetting(enum.Enum):
    """Measurement span paired with its fixed quantizer sensitivity."""

    G2 = (2.0, 256)  # +/-2g, 256 LSB/g
    G4 = (4.0, 128)  # +/-4g, 128 LSB/g
    G8 = (8.0, 64)  # +/-8g, 64 LSB/g

    @property
    def span(self) -> float:
        return self.value[0]

    @property
    def sensitivity(self) -> int:
        return self.value[1]

    def wider(self) -> "RangeSetting":
        order = [RangeSetting.G2, RangeSetting.G4, RangeSetting.G8]
        return order[min(order.index(self) + 1, 2)]


SLEEP_RANGE = RangeSetting.G2  # wake ticks sample at the low span / high sensitivity


@dataclass(frozen=True)
class AccelSample:
    """One triaxial reading in g, tagged with the per-axis range it was captured at."""

    t: float
    x: float
    y: float
    z: float
    ranges: tuple[RangeSetting, RangeSetting, RangeSetting] = (
        RangeSetting.G2,
        RangeSetting.G2,
        RangeSetting.G2,
    )

    def axis(self, name: str) -> float:
        return getattr(self, name)


@dataclass(frozen=True)
class ActivityWindow:
    """1-second feature summary: per-axis max |deviation from gravity| and label."""

    t_start: float
    max_abs_dev: tuple[float, float, float]  # x, y, z
    dominant_axis: str  # "x" | "y" | "z"
    state: StateId
    sample_count: int = 0

    @property
    def magnitude(self) -> float:
        return max(self.max_abs_dev)


@dataclass(frozen=True)
class ClassifierConfig:
    """Decision bands in g. t0 doubles as the sleep activation threshold."""

    t0: float = 0.1
    walk_hi: float = 0.7
    fall_thr: float = 2.5

    def validate(self) -> None:
        if not (0 < self.t0 < self.walk_hi < self.fall_thr):
            raise ValueError(
                f"thresholds must satisfy 0 < t0 < walk_hi < fall_thr, "
                f"got {self.t0}, {self.walk_hi}, {self.fall_thr}"
            )


class Mode(enum.Enum):
    SLEEP = "sleep"
    ACTIVE = "active"


@dataclass
class NodePowerState:
    mode: Mode = Mode.SLEEP
    last_activity_t: float = 0.0
    t0: float = 0.1
    inactivity_timeout: float = 360.0  # seconds of sub-threshold windows before sleep
    quiet_windows: int = 0  # consecutive sub-threshold windows while active


class EmptyWindowError(ValueError):
    """A classification window arrived with no samples."""


def quantize(sample_g: float, rng: RangeSetting) -> int:
    """ADC counts for a reading: clamp to the span, then scale by sensitivity."""
    clamped = max(-rng.span, min(rng.span, sample_g))
    return int(math.floor(clamped * rng.sensitivity + 0.5))


def dequantize(counts: int, rng: RangeSetting) -> float:
    return counts / rng.sensitivity


def is_saturated(counts: int, rng: RangeSetting) -> bool:
    return abs(counts) >= int(rng.span * rng.sensitivity)


def adapt_range(value_g: float, current: RangeSetting) -> RangeSetting:
    """Next measurement range for one axis, from the latest reading in g.

    Three bands: |v| >= 4g selects +/-8g, |v| <= 2g selects +/-2g, the gap in
    between selects the +/-4g mid-range. Independent per axis; the result does
    not depend on the current setting.
    """
    del current  # band rule is memoryless; kept in the signature for call sites
    mag = abs(value_g)
    if mag >= 4.0:
        return RangeSetting.G8
    if mag <= 2.0:
        return RangeSetting.G2
    return RangeSetting.G4


def deviations(sample: AccelSample) -> tuple[float, float, float]:
    gx, gy, gz = GRAVITY_VECTOR
    return (sample.x - gx, sample.y - gy, sample.z - gz)


def window_features(
    t_start: float, samples: Iterable[AccelSample]
) -> tuple[tuple[float, float, float], str, int]:
    """Per-axis max |deviation|, dominant axis, and sample count for one window."""
    maxima = [0.0, 0.0, 0.0]
    n = 0
    for s in samples:
        n += 1
        for i, d in enumerate(deviations(s)):
            a = abs(d)
            if a > maxima[i]:
                maxima[i] = a
    if n == 0:
        raise EmptyWindowError(f"window at t={t_start} has no samples")
    dominant = AXES[max(range(3), key=lambda i: maxima[i])]
    return (maxima[0], maxima[1], maxima[2]), dominant, n


def classify_window(
    max_abs_dev: tuple[float, float, float],
    dominant_axis: str,
    config: ClassifierConfig = ClassifierConfig(),
) -> StateId:
    """Map window features to a state id.

    With m = max over axes of max |deviation|:
      m <  t0                      -> 1 resting
      t0 <= m < walk_hi            -> 2 walking/general movement
      m >= fall_thr and Z-dominant -> 4 falling
      otherwise m >= walk_hi       -> 3 running
    """
    m = max(max_abs_dev)
    if m < config.t0:
        return StateId.RESTING
    if m >= config.fall_thr and dominant_axis == "z":
        return StateId.FALLING
    if m >= config.walk_hi:
        return StateId.RUNNING
    return StateId.WALKING


def step_node(
    state: NodePowerState, window: ActivityWindow
) -> tuple[NodePowerState, StateId]:
    """Advance the sleep/active machine by one 1-second window.

    Sleeping nodes emit a once-per-wake resting heartbeat while quiet and
    activate on the first window whose magnitude exceeds t0. Active nodes emit
    every window's classification and fall back asleep after
    ``inactivity_timeout`` seconds of consecutive sub-threshold windows.
    """
    if window.sample_count == 0:
        raise EmptyWindowError(f"window at t={window.t_start} has no samples")
    m = window.magnitude
    if state.mode is Mode.SLEEP:
        if m > state.t0:
            return _with(state, mode=Mode.ACTIVE, last_t=window.t_start), window.state
        return state, StateId.RESTING  # once-per-wake heartbeat
    if m <= state.t0:
        quiet = state.quiet_windows + 1
        if quiet >= state.inactivity_timeout:
            return _with(state, mode=Mode.SLEEP, last_t=state.last_activity_t), window.state
        return _with(state, mode=Mode.ACTIVE, last_t=state.last_activity_t, quiet=quiet), window.state
    return _with(state, mode=Mode.ACTIVE, last_t=window.t_start), window.state


def _with(
    state: NodePowerState, mode: Mode, last_t: float, quiet: int = 0
) -> NodePowerState:
    return NodePowerState(
        mode=mode,
        last_activity_t=last_t,
        t0=state.t0,
        inactivity_timeout=state.inactivity_timeout,
        quiet_windows=quiet,
    )


@dataclass
class NodeEmission:
    """One per-second classification emitted by the node."""

    t: float  # window end time
    state: StateId
    window: ActivityWindow
    mode: Mode  # mode the window was processed in


@dataclass
class AccelNode:
    """Complete node pipeline over a raw trace: measure, adapt, window, classify.

    ``process`` consumes ground-truth samples in time order and is the single
    code path for both live simulation and offline replay, so the two cannot
    diverge. While asleep only the first sample of each second (the wake tick)
    is measured, at the +/-2g high-sensitivity setting; while active every
    sample is measured at the per-axis adaptive range. A trailing window is
    emitted only if the trace covers it to within one sample period;
    otherwise it is dropped and ``dropped_partial_window`` is set.
    """

    fs: float = 50.0
    config: ClassifierConfig = field(default_factory=ClassifierConfig)
    inactivity_timeout: float = 360.0
    power: NodePowerState = field(init=False)
    ranges: dict[str, RangeSetting] = field(init=False)
    dropped_partial_window: bool = field(init=False, default=False)

    def __post_init__(self) -> None:
        self.config.validate()
        if not 10.0 <= self.fs <= 100.0:
            raise ValueError(f"fs must be within [10, 100] Hz, got {self.fs}")
        self.power = NodePowerState(
            t0=self.config.t0, inactivity_timeout=self.inactivity_timeout
        )
        self.ranges = {a: SLEEP_RANGE for a in AXES}

    def _measure(self, sample: AccelSample, adapt: bool) -> AccelSample:
        """Quantize each axis at its current range; optionally adapt for the next."""
        measured = {}
        tags = []
        for axis in AXES:
            rng = self.ranges[axis]
            counts = quantize(sample.axis(axis), rng)
            measured[axis] = dequantize(counts, rng)
            tags.append(rng)
            if adapt:
                if is_saturated(counts, rng):
                    # full-scale reading hides the true magnitude; never narrow
                    nxt = adapt_range(measured[axis], rng)
                    self.ranges[axis] = nxt if nxt.span > rng.span else rng.wider()
                else:
                    self.ranges[axis] = adapt_range(measured[axis], rng)
        return AccelSample(
            t=sample.t, x=measured["x"], y=measured["y"], z=measured["z"],
            ranges=(tags[0], tags[1], tags[2]),
        )

    def process(self, samples: Iterable[AccelSample]) -> Iterator[NodeEmission]:
        """Yield one emission per complete 1-second window, in time order."""
        self.dropped_partial_window = False
        window: list[AccelSample] = []
        window_start: float | None = None
        last_t: float | None = None
        for s in samples:
            if last_t is not None and s.t <= last_t:
                raise ValueError(f"sample times must be strictly increasing at t={s.t}")
            last_t = s.t
            if window_start is None:
                window_start = float(math.floor(s.t))
            while s.t >= window_start + 1.0:
                if window:
                    yield self._close_window(window_start, window)
                    window = []
                window_start += 1.0
            if self.power.mode is Mode.SLEEP:
                if not window:  # wake tick: first sample of the second
                    tick = AccelSample(t=s.t, x=s.x, y=s.y, z=s.z)
                    window.append(self._measure(tick, adapt=False))
            else:
                window.append(self._measure(s, adapt=True))
        if window and window_start is not None and last_t is not None:
            if last_t >= window_start + 1.0 - 1.0 / self.fs - 1e-9:
                yield self._close_window(window_start, window)
            else:
                self.dropped_partial_window = True

    def _close_window(self, t_start: float, samples: list[AccelSample]) -> NodeEmission:
        mode_in = self.power.mode
        maxima, dominant, n = window_features(t_start, samples)
        state = classify_window(maxima, dominant, self.config)
        win = ActivityWindow(
            t_start=t_start, max_abs_dev=maxima, dominant_axis=dominant,
            state=state, sample_count=n,
        )
        self.power, emitted = step_node(self.power, win)
        if mode_in is Mode.SLEEP and self.power.mode is Mode.ACTIVE:
            # waking restarts adaptive ranging from the sleep setting
            self.ranges = {a: SLEEP_RANGE for a in AXES}
        return NodeEmission(t=t_start + 1.0, state=emitted, window=win, mode=mode_in)
