"""Scenario scripts: the declarative input driving every simulation run.

A script is plain text, one directive per line:

    # comment
    seed 42
    noise accel=0.01 ppg=0.0
    segment dur=10 activity=1 spo2=0.97 hr=62 lat=-25.7313 lon=28.2184
    segment dur=8  activity=2 spo2=0.96 hr=88 lat=-25.7313 lon=28.2190

``seed`` and ``noise`` are optional (defaults: seed 0, no noise).  Segment
fields: ``dur`` seconds > 0, ``activity`` state id 1-4, ``spo2`` fraction in
[0, 0.97], ``hr`` bpm in [30, 245], ``lat``/``lon`` decimal degrees.
Identical (seed, segments, noise) always produce bit-identical streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

SPO2_MAX = 0.97
HR_MIN = 30.0
HR_MAX = 245.0


class ScenarioError(ValueError):
    """Malformed scenario script; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class LatLon:
    lat: float
    lon: float

    def distance_m(self, other: "LatLon") -> float:
        """Great-circle distance in metres (haversine)."""
        r = 6_371_000.0
        p1, p2 = math.radians(self.lat), math.radians(other.lat)
        dp = p2 - p1
        dl = math.radians(other.lon - self.lon)
        a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
        return 2 * r * math.asin(math.sqrt(a))


@dataclass(frozen=True)
class Segment:
    duration_s: float
    activity: int  # state id 1..4
    spo2_true: float  # fraction, [0, 0.97]
    hr_true: float  # bpm, [30, 245]
    location: LatLon

    def validate(self, line: int | None = None) -> None:
        if self.duration_s <= 0:
            raise ScenarioError(f"segment duration must be > 0, got {self.duration_s}", line)
        if self.activity not in (1, 2, 3, 4):
            raise ScenarioError(f"activity must be a state id 1-4, got {self.activity}", line)
        if not 0.0 <= self.spo2_true <= SPO2_MAX:
            raise ScenarioError(
                f"spo2 must be in [0, {SPO2_MAX}], got {self.spo2_true}", line
            )
        if not HR_MIN <= self.hr_true <= HR_MAX:
            raise ScenarioError(
                f"hr must be in [{HR_MIN:.0f}, {HR_MAX:.0f}], got {self.hr_true}", line
            )


@dataclass
class ScenarioScript:
    seed: int = 0
    segments: list[Segment] = field(default_factory=list)
    noise: dict[str, float] = field(default_factory=dict)  # channel -> stddev

    def validate(self) -> None:
        if not self.segments:
            raise ScenarioError("script has no segments")
        for seg in self.segments:
            seg.validate()
        for name, sigma in self.noise.items():
            if name not in ("accel", "ppg"):
                raise ScenarioError(f"unknown noise channel {name!r}")
            if sigma < 0:
                raise ScenarioError(f"noise stddev must be >= 0, got {sigma}")

    @property
    def total_duration_s(self) -> float:
        return sum(seg.duration_s for seg in self.segments)

    def segment_at(self, t: float) -> Segment:
        """Segment owning virtual time t (end-exclusive; last segment owns its end)."""
        acc = 0.0
        for seg in self.segments:
            acc += seg.duration_s
            if t < acc:
                return seg
        return self.segments[-1]

    def boundaries(self) -> list[float]:
        """Cumulative segment start times, plus the final end time."""
        out = [0.0]
        for seg in self.segments:
            out.append(out[-1] + seg.duration_s)
        return out


def _parse_kv(tokens: list[str], line: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ScenarioError(f"expected key=value, got {tok!r}", line)
        key, _, val = tok.partition("=")
        out[key] = val
    return out


def _num(kv: dict[str, str], key: str, line: int) -> float:
    if key not in kv:
        raise ScenarioError(f"segment missing required field {key!r}", line)
    try:
        return float(kv[key])
    except ValueError:
        raise ScenarioError(f"field {key}={kv[key]!r} is not a number", line) from None


def parse_scenario(text: str) -> ScenarioScript:
    """Parse a scenario script, raising ScenarioError with a line number on bad input."""
    script = ScenarioScript()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        directive, args = tokens[0], tokens[1:]
        if directive == "seed":
            if len(args) != 1:
                raise ScenarioError("seed takes exactly one integer", lineno)
            try:
                script.seed = int(args[0])
            except ValueError:
                raise ScenarioError(f"seed {args[0]!r} is not an integer", lineno) from None
        elif directive == "noise":
            kv = _parse_kv(args, lineno)
            for name in kv:
                script.noise[name] = _num(kv, name, lineno)
        elif directive == "segment":
            kv = _parse_kv(args, lineno)
            seg = Segment(
                duration_s=_num(kv, "dur", lineno),
                activity=int(_num(kv, "activity", lineno)),
                spo2_true=_num(kv, "spo2", lineno),
                hr_true=_num(kv, "hr", lineno),
                location=LatLon(_num(kv, "lat", lineno), _num(kv, "lon", lineno)),
            )
            seg.validate(lineno)
            script.segments.append(seg)
        else:
            raise ScenarioError(f"unknown directive {directive!r}", lineno)
    script.validate()
    return script


def load_scenario(path: str | Path) -> ScenarioScript:
    return parse_scenario(Path(path).read_text())


def format_scenario(script: ScenarioScript) -> str:
    """Render a script back to its text form (inverse of parse_scenario)."""
    lines = [f"seed {script.seed}"]
    if script.noise:
        pairs = " ".join(f"{k}={v:g}" for k, v in sorted(script.noise.items()))
        lines.append(f"noise {pairs}")
    for seg in script.segments:
        lines.append(
            f"segment dur={seg.duration_s:g} activity={seg.activity} "
            f"spo2={seg.spo2_true:g} hr={seg.hr_true:g} "
            f"lat={seg.location.lat:g} lon={seg.location.lon:g}"
        )
    return "\n".join(lines) + "\n"
