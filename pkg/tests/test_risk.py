import math
import random

import pytest

from vitalnet.mhs.risk import RiskModel, decide, features, score, sigmoid


def packet(hr=75.0, spo2=96.0, activity=1, pid="p", t=0.0):
    return {"patient_id": pid, "t": t, "activity": activity, "spo2": spo2,
            "hr": hr, "lat": 0.0, "lon": 0.0}


def test_sigmoid_midpoint():
    assert sigmoid(0.0) == pytest.approx(0.5, abs=1e-15)


def test_healthy_baseline_probability():
    # frozen oracle: 1 / (1 + e^2) computed independently of the model code
    expected = 1.0 / (1.0 + math.exp(2.0))
    assert expected == pytest.approx(0.11920292202211755, abs=1e-15)
    model = RiskModel()
    p = score(packet(), None, model)
    assert p == pytest.approx(expected, abs=1e-12)
    assert not decide(packet(), None, model).alert


def test_baseline_features_are_zero():
    x = features(packet(), None, RiskModel())
    assert all(v == 0.0 for v in x.values())


def test_fall_is_critical_regardless_of_score():
    model = RiskModel()
    d = decide(packet(activity=4), None, model)
    assert d.alert and d.severity == "critical" and "fall" in d.causes


def test_low_spo2_hard_rule_critical():
    d = decide(packet(spo2=85.0), None, RiskModel())
    assert d.alert and d.severity == "critical" and "spo2_below_90" in d.causes


def test_hr_out_of_band_hard_rule_warn():
    d = decide(packet(hr=35.0), None, RiskModel())
    assert d.alert and "hr_out_of_band" in d.causes
    assert d.severity == "warn"


def test_score_only_alert_is_warn():
    # drive z past 0 with activity alone: bias -2 + 0.4*(3-1) + hr deviation
    model = RiskModel()
    d = decide(packet(hr=131.0, activity=3), None, model)
    # z = -2 + 0.05*31 + 0.4*2 = 0.35 -> p = sigmoid(0.35) > 0.5
    assert d.probability > 0.5
    assert d.alert and d.severity == "warn" and "risk_score" in d.causes


def test_monotone_in_spo2_deficit():
    model = RiskModel()
    last = -1.0
    for spo2 in [96, 95, 94, 92, 90.5]:
        p = score(packet(spo2=spo2), None, model)
        assert p >= last
        last = p


def test_alert_iff_score_or_hard_rule_random_sweep():
    # independent oracle reimplements the decision rule from scratch
    model = RiskModel()
    rng = random.Random(123)
    for _ in range(2000):
        p = packet(
            hr=rng.uniform(30, 245),
            spo2=rng.uniform(0, 97),
            activity=rng.choice([1, 2, 3, 4]),
        )
        prev = None
        if rng.random() < 0.5:
            prev = packet(hr=rng.uniform(30, 245), spo2=rng.uniform(0, 97))
        d = decide(p, prev, model)
        x = {
            "hr_band_dev": max(0.0, 60 - p["hr"]) + max(0.0, p["hr"] - 100),
            "spo2_deficit": max(0.0, 95 - p["spo2"]),
            "activity_excess": p["activity"] - 1,
            "fall": 1.0 if p["activity"] == 4 else 0.0,
            "hr_delta": abs(p["hr"] - prev["hr"]) if prev else 0.0,
            "spo2_delta": abs(p["spo2"] - prev["spo2"]) if prev else 0.0,
        }
        z = model.bias + sum(model.weights[k] * v for k, v in x.items())
        oracle_p = 1.0 / (1.0 + math.exp(-z))
        hard = p["spo2"] < 90 or not 40 <= p["hr"] <= 180 or p["activity"] == 4
        assert d.probability == pytest.approx(oracle_p, rel=1e-12)
        assert d.alert == (oracle_p >= 0.5 or hard)


def test_model_json_round_trip():
    model = RiskModel(bias=-1.5)
    again = RiskModel.from_json(model.to_json())
    assert again == model
