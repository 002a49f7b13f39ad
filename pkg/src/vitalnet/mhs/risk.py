"""Risk scoring: logistic model over vitals features plus hard safety rules.

The model family is logistic regression; the feature map and default weights
are configuration, chosen around standard clinical reference bands (resting
heart rate 60-100 bpm, saturation reference 95%). Every feature is zero for a
healthy resting packet, so the baseline probability is sigmoid(bias). Hard
rules fire regardless of the score: severe desaturation, heart rate outside
the survivable band, or a detected fall.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

FALL_STATE = 4

DEFAULT_WEIGHTS = {
    "hr_band_dev": 0.05,  # per bpm outside the resting band
    "spo2_deficit": 0.35,  # per point below the reference saturation
    "activity_excess": 0.4,  # state id above resting
    "fall": 5.0,
    "hr_delta": 0.01,  # |change| vs previous packet, bpm
    "spo2_delta": 0.05,  # |change| vs previous packet, points
}


@dataclass(frozen=True)
class RiskModel:
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    bias: float = -2.0
    hr_band: tuple[float, float] = (60.0, 100.0)
    spo2_ref: float = 95.0
    alert_threshold: float = 0.5
    hard_spo2_below: float = 90.0
    hard_hr_band: tuple[float, float] = (40.0, 180.0)

    def to_json(self) -> dict:
        return {
            "weights": dict(self.weights),
            "bias": self.bias,
            "hr_band": list(self.hr_band),
            "spo2_ref": self.spo2_ref,
            "alert_threshold": self.alert_threshold,
            "hard_spo2_below": self.hard_spo2_below,
            "hard_hr_band": list(self.hard_hr_band),
        }

    @classmethod
    def from_json(cls, data: dict) -> "RiskModel":
        kwargs = {}
        if "weights" in data:
            kwargs["weights"] = dict(data["weights"])
        for key in ("bias", "spo2_ref", "alert_threshold", "hard_spo2_below"):
            if key in data:
                kwargs[key] = float(data[key])
        for key in ("hr_band", "hard_hr_band"):
            if key in data:
                kwargs[key] = (float(data[key][0]), float(data[key][1]))
        return cls(**kwargs)


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def features(packet: dict, prev: dict | None, model: RiskModel) -> dict[str, float]:
    """Feature vector for one packet; trend deltas compare with the previous one."""
    hr = float(packet["hr"])
    spo2 = float(packet["spo2"])
    activity = int(packet["activity"])
    lo, hi = model.hr_band
    out = {
        "hr_band_dev": max(0.0, lo - hr) + max(0.0, hr - hi),
        "spo2_deficit": max(0.0, model.spo2_ref - spo2),
        "activity_excess": float(activity - 1),
        "fall": 1.0 if activity == FALL_STATE else 0.0,
        "hr_delta": abs(hr - float(prev["hr"])) if prev else 0.0,
        "spo2_delta": abs(spo2 - float(prev["spo2"])) if prev else 0.0,
    }
    return out


def score(packet: dict, prev: dict | None, model: RiskModel) -> float:
    x = features(packet, prev, model)
    z = model.bias + sum(model.weights.get(k, 0.0) * v for k, v in x.items())
    return sigmoid(z)


@dataclass(frozen=True)
class RiskDecision:
    probability: float
    alert: bool
    severity: str | None  # "warn" | "critical" when alerting
    causes: tuple[str, ...]


def decide(packet: dict, prev: dict | None, model: RiskModel) -> RiskDecision:
    """Score the packet and apply hard rules; severity escalates on fall or
    severe desaturation."""
    p = score(packet, prev, model)
    causes: list[str] = []
    hr = float(packet["hr"])
    spo2 = float(packet["spo2"])
    if spo2 < model.hard_spo2_below:
        causes.append("spo2_below_90")
    if not model.hard_hr_band[0] <= hr <= model.hard_hr_band[1]:
        causes.append("hr_out_of_band")
    if int(packet["activity"]) == FALL_STATE:
        causes.append("fall")
    if p >= model.alert_threshold:
        causes.append("risk_score")
    if not causes:
        return RiskDecision(probability=p, alert=False, severity=None, causes=())
    critical = "fall" in causes or "spo2_below_90" in causes
    return RiskDecision(
        probability=p,
        alert=True,
        severity="critical" if critical else "warn",
        causes=tuple(causes),
    )
